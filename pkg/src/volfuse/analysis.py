"""Lateral resolution versus depth, depth-of-field, and image export."""

from __future__ import annotations

import colorsys
import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .volume import MapImage, Volume, map_project

SIGNAL_FRACTION = 0.1
# hue at the shallowest and deepest slice (red -> blue)
NEAR_HUE = 0.0
FAR_HUE = 2.0 / 3.0


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class FwhmCurve:
    depths_um: np.ndarray
    fwhm_um: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depths_um, dtype=np.float64)
        f = np.asarray(self.fwhm_um, dtype=np.float64)
        if d.shape != f.shape or d.ndim != 1:
            raise ValueError("depths and FWHM values must be 1D arrays of equal length")
        if np.any(np.diff(d) <= 0):
            raise ValueError("depths must be strictly increasing")
        if np.any(f <= 0):
            raise ValueError("FWHM values must be positive")
        object.__setattr__(self, "depths_um", d)
        object.__setattr__(self, "fwhm_um", f)

    def __len__(self) -> int:
        return self.depths_um.size

    @property
    def nadir(self) -> float:
        return float(self.fwhm_um.min())

    @property
    def nadir_depth(self) -> float:
        return float(self.depths_um[np.argmin(self.fwhm_um)])

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["depth_um", "fwhm_um"])
            for d, f in zip(self.depths_um, self.fwhm_um):
                w.writerow([repr(float(d)), repr(float(f))])

    @classmethod
    def load_csv(cls, path) -> FwhmCurve:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([float(r["depth_um"]) for r in rows]), np.array([float(r["fwhm_um"]) for r in rows]))


@dataclass(frozen=True)
class DofResult:
    dof_um: float
    lower_um: float
    upper_um: float
    nadir_fwhm_um: float
    nadir_depth_um: float
    threshold_um: float
    censored_lower: bool
    censored_upper: bool

    def __post_init__(self):
        # keep plain Python scalars so the result serializes predictably
        for name in ("dof_um", "lower_um", "upper_um", "nadir_fwhm_um", "nadir_depth_um", "threshold_um"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "censored_lower", bool(self.censored_lower))
        object.__setattr__(self, "censored_upper", bool(self.censored_upper))

    @property
    def censored(self) -> bool:
        return self.censored_lower or self.censored_upper

    def to_dict(self) -> dict:
        d = asdict(self)
        d["censored"] = self.censored
        return d

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def profile_fwhm(profile, pitch_um: float = 1.0) -> float:
    """FWHM of the global peak, from linearly interpolated half-maximum crossings."""
    p = np.asarray(profile, dtype=np.float64)
    if p.ndim != 1 or p.size < 3:
        raise AnalysisError("profile needs at least 3 samples")
    peak = int(np.argmax(p))
    if p[peak] <= 0:
        raise AnalysisError("profile has no positive peak")
    half = p[peak] / 2.0

    left = peak
    while left > 0 and p[left - 1] > half:
        left -= 1
    right = peak
    while right < p.size - 1 and p[right + 1] > half:
        right += 1
    if left == 0 or right == p.size - 1:
        raise AnalysisError("profile does not fall to half maximum on both sides of the peak")

    # crossing lies between (left-1, left) and (right, right+1)
    x_left = left - (p[left] - half) / (p[left] - p[left - 1])
    x_right = right + (p[right] - half) / (p[right] - p[right + 1])
    return float((x_right - x_left) * pitch_um)


def fwhm_vs_depth(
    vol: Volume,
    profile_axis: str = "y",
    signal_fraction: float = SIGNAL_FRACTION,
) -> FwhmCurve:
    """Lateral FWHM through the structure's amplitude centroid at each depth.

    The profile runs along ``profile_axis`` and is taken at the column of the
    other lateral axis nearest the slice centroid. Slices whose maximum is
    below ``signal_fraction`` of the volume maximum are skipped, as are slices
    whose profile never falls to half maximum.
    """
    if profile_axis not in ("x", "y"):
        raise ValueError("profile_axis must be 'x' or 'y'")
    data = vol.data if profile_axis == "y" else vol.data.transpose(1, 0, 2)
    pitch = vol.spacing[1] if profile_axis == "y" else vol.spacing[0]
    floor = signal_fraction * float(data.max())
    depths, widths = [], []
    for k in range(vol.nz):
        sl = data[:, :, k]
        if floor <= 0 or sl.max() < floor:
            continue
        weights = np.clip(sl, 0.0, None)
        col_mass = weights.sum(axis=1)
        col = int(round(float(np.arange(sl.shape[0]) @ col_mass / col_mass.sum())))
        try:
            widths.append(profile_fwhm(sl[col, :], pitch))
        except AnalysisError:
            continue
        depths.append(k * vol.spacing[2])
    if len(depths) < 3:
        raise AnalysisError(f"only {len(depths)} usable slices; need at least 3")
    return FwhmCurve(np.array(depths), np.array(widths))


def _crossing(z0, f0, z1, f1, level) -> float:
    return z0 + (level - f0) * (z1 - z0) / (f1 - f0)


def dof_measure(curve: FwhmCurve) -> DofResult:
    """Depth range around the nadir over which FWHM stays below twice the nadir."""
    if len(curve) < 3:
        raise AnalysisError("DoF needs a curve with at least 3 points")
    z, f = curve.depths_um, curve.fwhm_um
    i0 = int(np.argmin(f))
    nadir = float(f[i0])
    level = 2.0 * nadir

    i = i0
    while i > 0 and f[i - 1] < level:
        i -= 1
    censored_lower = i == 0
    lower = float(z[0]) if censored_lower else _crossing(z[i], f[i], z[i - 1], f[i - 1], level)

    j = i0
    while j < len(f) - 1 and f[j + 1] < level:
        j += 1
    censored_upper = j == len(f) - 1
    upper = float(z[-1]) if censored_upper else _crossing(z[j], f[j], z[j + 1], f[j + 1], level)

    return DofResult(
        dof_um=upper - lower,
        lower_um=lower,
        upper_um=upper,
        nadir_fwhm_um=nadir,
        nadir_depth_um=float(z[i0]),
        threshold_um=level,
        censored_lower=censored_lower,
        censored_upper=censored_upper,
    )


def depth_hue(depth_index, nz: int) -> np.ndarray:
    frac = np.asarray(depth_index, dtype=np.float64) / max(nz - 1, 1)
    return NEAR_HUE + frac * (FAR_HUE - NEAR_HUE)


def depth_coded_map(vol: Volume) -> np.ndarray:
    """RGB image (height, width, 3) in [0, 1]: hue from argmax depth, value from amplitude."""
    mip = map_project(vol, "z")
    pix = mip.pixels
    lo, hi = float(pix.min()), float(pix.max())
    value = (pix - lo) / (hi - lo) if hi > lo else np.zeros_like(pix)
    hue = depth_hue(mip.depth_index, vol.nz)
    rgb = np.empty(pix.shape + (3,))
    for idx in np.ndindex(pix.shape):
        rgb[idx] = colorsys.hsv_to_rgb(float(hue[idx]), 1.0, float(value[idx]))
    return rgb


def pearson(a, b) -> float:
    a = np.asarray(a.pixels if isinstance(a, MapImage) else a, dtype=np.float64).ravel()
    b = np.asarray(b.pixels if isinstance(b, MapImage) else b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    if den == 0:
        raise AnalysisError("correlation undefined for a constant image")
    return float((a @ b) / den)


def to_uint8(img) -> np.ndarray:
    arr = np.asarray(img.pixels if isinstance(img, MapImage) else img, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    norm = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    return np.round(norm * 255.0).astype(np.uint8)


def write_pgm(path, img) -> None:
    """Binary P5 greyscale, min-max normalized to 8 bits."""
    px = to_uint8(img)
    h, w = px.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 colour from an (h, w, 3) array in [0, 1]."""
    px = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = px.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def read_pnm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in ("P5", "P6"):
        raise ValueError(f"{path}: unsupported PNM header {tokens}")
    channels = 3 if magic == "P6" else 1
    px = np.frombuffer(raw, dtype=np.uint8, count=w * h * channels, offset=pos)
    return px.reshape((h, w, 3) if channels == 3 else (h, w))
