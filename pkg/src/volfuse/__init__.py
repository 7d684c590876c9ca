"""Multi-focus 3D volume fusion with stationary wavelets and block-wise STD selection."""

__version__ = "0.1.0"

from .analysis import DofResult, FwhmCurve, depth_coded_map, dof_measure, fwhm_vs_depth, profile_fwhm
from .fusion import FusionConfig, SelectionMask, fuse_subband, fuse_volumes
from .metrics import EvaluationReport, MetricWeights, average_gradient, entropy, joint_score, ssim
from .optimizer import DeConfig, DeTrace, evaluate_candidate, optimize_block_size
from .phantom import BeamModel, PhantomScene, apply_defocus, generate_multifocus, rasterize
from .swt import SubbandSet, WaveletFilter, swt_forward, swt_inverse
from .volume import BlockSpec, MapImage, Volume, block_std, bscan_extract, map_project, partition, read_volf, write_volf

__all__ = [
    "BeamModel",
    "BlockSpec",
    "DeConfig",
    "DeTrace",
    "DofResult",
    "EvaluationReport",
    "FusionConfig",
    "FwhmCurve",
    "MapImage",
    "MetricWeights",
    "PhantomScene",
    "SelectionMask",
    "SubbandSet",
    "Volume",
    "WaveletFilter",
    "apply_defocus",
    "average_gradient",
    "block_std",
    "bscan_extract",
    "depth_coded_map",
    "dof_measure",
    "entropy",
    "evaluate_candidate",
    "fuse_subband",
    "fuse_volumes",
    "fwhm_vs_depth",
    "generate_multifocus",
    "joint_score",
    "map_project",
    "optimize_block_size",
    "partition",
    "profile_fwhm",
    "rasterize",
    "read_volf",
    "ssim",
    "swt_forward",
    "swt_inverse",
    "write_volf",
]
