"""Desk-scale simulator of a learned point-cloud transmission link."""

__version__ = "0.1.0"

from .channel import ChannelConfig, DigitalConfig, digital_transmit, normalize_power, transmit
from .codec import Codec, CodecConfig, TrainConfig
from .metrics import QualityReport, compare, estimate_normals, mse_c2c, mse_c2p, psnr
from .pointcloud_io import PointCloud, PlyParseError, gen_shape, read_ply, write_ply
from .sse import GTable, OptimizeResult, build_g_table, optimize
from .voxel import Cube, binarize_topk, iou, merge, partition

__all__ = [
    "PointCloud",
    "PlyParseError",
    "gen_shape",
    "read_ply",
    "write_ply",
    "Cube",
    "binarize_topk",
    "iou",
    "merge",
    "partition",
    "Codec",
    "CodecConfig",
    "TrainConfig",
    "ChannelConfig",
    "DigitalConfig",
    "transmit",
    "digital_transmit",
    "normalize_power",
    "QualityReport",
    "compare",
    "estimate_normals",
    "mse_c2c",
    "mse_c2p",
    "psnr",
    "GTable",
    "OptimizeResult",
    "build_g_table",
    "optimize",
]
