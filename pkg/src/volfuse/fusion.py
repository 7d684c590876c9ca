"""Block-wise STD selection of wavelet subbands across multi-focus sources."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .swt import SUBBAND_LABELS, SubbandSet, get_filter, swt_forward, swt_inverse
from .volume import BlockSpec, Volume, block_std_map, expand_blocks, partition

TIE_POLICY = "lowest-index"


@dataclass(frozen=True)
class FusionConfig:
    """Block size per subband label, the wavelet, and the tie policy."""

    blocks: dict
    wavelet: str = "haar"
    tie_policy: str = TIE_POLICY

    def __post_init__(self):
        missing = [lab for lab in SUBBAND_LABELS if lab not in self.blocks]
        if missing:
            raise ValueError(f"fusion config has no block spec for {', '.join(missing)}")
        for lab, spec in self.blocks.items():
            if not isinstance(spec, BlockSpec):
                raise TypeError(f"block spec for {lab} must be a BlockSpec, got {type(spec).__name__}")
        if self.tie_policy != TIE_POLICY:
            raise ValueError(f"unsupported tie policy {self.tie_policy!r}")
        get_filter(self.wavelet)

    @classmethod
    def shared(cls, spec: BlockSpec, wavelet: str = "haar") -> FusionConfig:
        return cls({lab: spec for lab in SUBBAND_LABELS}, wavelet)

    @property
    def is_shared(self) -> bool:
        return len({self.blocks[lab] for lab in SUBBAND_LABELS}) == 1

    def to_dict(self) -> dict:
        return {
            "wavelet": self.wavelet,
            "tie_policy": self.tie_policy,
            "blocks": {lab: list(self.blocks[lab].as_tuple()) for lab in SUBBAND_LABELS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> FusionConfig:
        wavelet = d.get("wavelet", "haar")
        blocks = d.get("blocks", d.get("block"))
        if blocks is None:
            raise ValueError("fusion config needs 'blocks' (per subband) or 'block' (shared)")
        if isinstance(blocks, dict):
            parsed = {lab: BlockSpec(*blocks[lab]) for lab in blocks}
            return cls(parsed, wavelet, d.get("tie_policy", TIE_POLICY))
        return cls.shared(BlockSpec(*blocks), wavelet)


@dataclass
class SelectionMask:
    """Winning source index per block, per subband, in partition order."""

    winners: dict = field(default_factory=dict)
    block_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            lab: {
                "block_counts": list(self.block_counts[lab]),
                "winners": self.winners[lab].ravel().tolist(),
            }
            for lab in SUBBAND_LABELS
            if lab in self.winners
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> SelectionMask:
        raw = json.loads(Path(path).read_text())
        mask = cls()
        for lab, entry in raw.items():
            counts = tuple(entry["block_counts"])
            mask.block_counts[lab] = counts
            mask.winners[lab] = np.asarray(entry["winners"], dtype=np.int64).reshape(counts)
        return mask


def _check_sources(arrays) -> None:
    if len(arrays) < 2:
        raise ValueError(f"fusion needs at least 2 sources, got {len(arrays)}")
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"source dimensions differ: {sorted(shapes)}")


def select_blocks(arrays, spec: BlockSpec) -> tuple[np.ndarray, np.ndarray]:
    """Core of subband fusion on raw arrays: (fused array, winners per block)."""
    _check_sources(arrays)
    grid = partition(np.shape(arrays[0]), spec)
    stds = np.stack([block_std_map(a, grid) for a in arrays])
    # argmax returns the first maximum, so ties go to the lowest source index
    winners = np.argmax(stds, axis=0)
    choice = expand_blocks(winners, grid)
    fused = np.array(arrays[0], dtype=np.float64, copy=True)
    for i, arr in enumerate(arrays[1:], start=1):
        np.copyto(fused, arr, where=choice == i)
    return fused, winners


def fuse_subband(bands, spec: BlockSpec) -> tuple[Volume, np.ndarray]:
    """Copy each block from the source whose block has the largest STD."""
    vols = list(bands)
    arrays = [v.data if isinstance(v, Volume) else np.asarray(v, dtype=np.float64) for v in vols]
    fused, winners = select_blocks(arrays, spec)
    spacing = vols[0].spacing if isinstance(vols[0], Volume) else (1.0, 1.0, 1.0)
    return Volume(fused, spacing), winners


def fuse_subband_sets(band_sets, config: FusionConfig) -> tuple[SubbandSet, SelectionMask]:
    _check_sources(band_sets)
    fused, mask = {}, SelectionMask()
    for lab in SUBBAND_LABELS:
        arr, winners = select_blocks([bs[lab] for bs in band_sets], config.blocks[lab])
        fused[lab] = arr
        mask.winners[lab] = winners
        mask.block_counts[lab] = winners.shape
    return SubbandSet(fused, band_sets[0].spacing, config.wavelet), mask


def check_compatible(sources) -> None:
    if len(sources) < 2:
        raise ValueError(f"fusion needs at least 2 sources, got {len(sources)}")
    first = sources[0]
    for i, v in enumerate(sources[1:], start=1):
        if v.shape != first.shape:
            raise ValueError(f"source {i} has dims {v.shape}, source 0 has {first.shape}")
        if not np.allclose(v.spacing, first.spacing, rtol=1e-6):
            raise ValueError(f"source {i} has spacing {v.spacing}, source 0 has {first.spacing}")


def fuse_volumes(sources, config: FusionConfig) -> tuple[Volume, SelectionMask]:
    """Transform every source, fuse each subband with its block spec, invert."""
    sources = list(sources)
    check_compatible(sources)
    for lab in SUBBAND_LABELS:
        config.blocks[lab].validate_for(sources[0].shape)
    band_sets = [swt_forward(v, config.wavelet) for v in sources]
    fused_bands, mask = fuse_subband_sets(band_sets, config)
    return swt_inverse(fused_bands), mask
