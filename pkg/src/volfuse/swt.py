"""One-level undecimated 3D wavelet transform with periodic boundaries.

Forward filtering along an axis is a circular convolution with the
decomposition taps. The inverse applies the adjoint (circular correlation)
of every branch and halves the sum per axis; for an orthogonal filter pair
``|H0|^2 + |H1|^2 = 2`` at every frequency, so the round trip is exact up to
rounding. The halving is folded into the stored reconstruction taps.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import Volume, read_volf, write_volf

SUBBAND_LABELS = tuple("".join(p) for p in itertools.product("LH", repeat=3))


@dataclass(frozen=True)
class WaveletFilter:
    name: str
    dec_lo: tuple[float, ...]
    dec_hi: tuple[float, ...]
    rec_lo: tuple[float, ...]
    rec_hi: tuple[float, ...]

    @property
    def length(self) -> int:
        return len(self.dec_lo)

    @classmethod
    def orthogonal(cls, name: str, dec_lo) -> WaveletFilter:
        """Build the quadrature-mirror bank from an orthonormal low-pass."""
        lo = np.asarray(dec_lo, dtype=np.float64)
        n = lo.size
        hi = np.array([(-1) ** k * lo[n - 1 - k] for k in range(n)])
        return cls(
            name=name,
            dec_lo=tuple(lo),
            dec_hi=tuple(hi),
            rec_lo=tuple(lo[::-1] / 2.0),
            rec_hi=tuple(hi[::-1] / 2.0),
        )


_SQRT2 = np.sqrt(2.0)
_SQRT3 = np.sqrt(3.0)

FILTERS = {
    "haar": WaveletFilter.orthogonal("haar", [1 / _SQRT2, 1 / _SQRT2]),
    "db2": WaveletFilter.orthogonal(
        "db2",
        [
            (1 + _SQRT3) / (4 * _SQRT2),
            (3 + _SQRT3) / (4 * _SQRT2),
            (3 - _SQRT3) / (4 * _SQRT2),
            (1 - _SQRT3) / (4 * _SQRT2),
        ],
    ),
}


def get_filter(name_or_filter) -> WaveletFilter:
    if isinstance(name_or_filter, WaveletFilter):
        return name_or_filter
    try:
        return FILTERS[name_or_filter]
    except KeyError:
        raise ValueError(
            f"unknown wavelet {name_or_filter!r}; available: {', '.join(sorted(FILTERS))}"
        ) from None


@dataclass(frozen=True)
class SubbandSet:
    """The eight coefficient volumes of one decomposition, keyed LLL..HHH.

    Letter i of a label is the filter applied along axis i (x, y, z).
    """

    bands: dict
    spacing: tuple[float, float, float]
    wavelet: str = "haar"

    def __post_init__(self):
        missing = [lab for lab in SUBBAND_LABELS if lab not in self.bands]
        if missing:
            raise ValueError(f"subband set is missing {', '.join(missing)}")
        extra = set(self.bands) - set(SUBBAND_LABELS)
        if extra:
            raise ValueError(f"unknown subband labels {sorted(extra)}")
        shapes = {np.shape(self.bands[lab]) for lab in SUBBAND_LABELS}
        if len(shapes) != 1:
            raise ValueError(f"subbands have mismatched dimensions {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return np.shape(self.bands["LLL"])

    def __getitem__(self, label: str) -> np.ndarray:
        return self.bands[label]

    def volume(self, label: str) -> Volume:
        return Volume(self.bands[label], self.spacing)

    def map(self, fn) -> SubbandSet:
        return SubbandSet({lab: fn(self.bands[lab]) for lab in SUBBAND_LABELS}, self.spacing, self.wavelet)


def _shift_accumulate(data: np.ndarray, taps, shifts, axis: int) -> np.ndarray:
    # out[n] = sum_k taps[k] * data[(n - shifts[k]) mod N]
    src = np.moveaxis(data, axis, 0)
    n = src.shape[0]
    out = np.zeros_like(src)
    for t, s in zip(taps, shifts):
        s %= n
        if s == 0:
            out += t * src
        else:
            out[s:] += t * src[: n - s]
            out[:s] += t * src[n - s :]
    return np.moveaxis(out, 0, axis)


def _conv_axis(data: np.ndarray, taps, axis: int) -> np.ndarray:
    return _shift_accumulate(data, taps, range(len(taps)), axis)


def _corr_axis(data: np.ndarray, taps, axis: int) -> np.ndarray:
    # circular convolution with the (reversed, halved) reconstruction taps,
    # realigned so each branch is the adjoint of _conv_axis up to the 1/2
    shift = len(taps) - 1
    return _shift_accumulate(data, taps, [k - shift for k in range(len(taps))], axis)


def swt_forward(vol: Volume, wavelet="haar") -> SubbandSet:
    filt = get_filter(wavelet)
    if min(vol.shape) < 2:
        raise ValueError(f"every axis needs at least 2 voxels, got shape {vol.shape}")
    taps = {"L": filt.dec_lo, "H": filt.dec_hi}
    level = {"": vol.data}
    for axis in range(3):
        level = {
            prefix + f: _conv_axis(arr, taps[f], axis)
            for prefix, arr in level.items()
            for f in "LH"
        }
    return SubbandSet(level, vol.spacing, filt.name)


def swt_inverse(bands: SubbandSet, wavelet=None) -> Volume:
    filt = get_filter(wavelet if wavelet is not None else bands.wavelet)
    taps = {"L": filt.rec_lo, "H": filt.rec_hi}
    level = dict(bands.bands)
    for axis in (2, 1, 0):
        merged = {}
        for label, arr in level.items():
            prefix, f = label[:-1], label[-1]
            part = _corr_axis(arr, taps[f], axis)
            merged[prefix] = merged[prefix] + part if prefix in merged else part
        level = merged
    return Volume(level[""], bands.spacing)


def save_subbands(stem, bands: SubbandSet) -> list[Path]:
    """Write ``<stem>_LLL.volf`` ... plus a ``<stem>_subbands.json`` sidecar."""
    stem = Path(stem)
    paths = []
    for label in SUBBAND_LABELS:
        path = stem.with_name(f"{stem.name}_{label}.volf")
        write_volf(path, bands.volume(label))
        paths.append(path)
    sidecar = stem.with_name(f"{stem.name}_subbands.json")
    sidecar.write_text(
        json.dumps({"wavelet": bands.wavelet, "labels": list(SUBBAND_LABELS)}, indent=2) + "\n"
    )
    return paths + [sidecar]


def load_subbands(stem) -> SubbandSet:
    stem = Path(stem)
    meta = json.loads(stem.with_name(f"{stem.name}_subbands.json").read_text())
    vols = {lab: read_volf(stem.with_name(f"{stem.name}_{lab}.volf")) for lab in SUBBAND_LABELS}
    return SubbandSet({lab: v.data for lab, v in vols.items()}, vols["LLL"].spacing, meta["wavelet"])
