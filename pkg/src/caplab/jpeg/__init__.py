"""JPEG quantization surrogate, loss analysis, and dataset synthesis."""

from .analysis import LossReport, binned_loss_stats, loss_map
from .surrogate import SUBSAMPLING_MODES, jpeg_roundtrip, rgb_to_ycbcr, ycbcr_to_rgb
from .synth import (
    DarkenParams,
    DatasetManifest,
    DatasetTriplet,
    darken,
    generate_procedural_images,
    load_manifest,
    procedural_image,
    synthesize_dataset,
)
from .tables import BASE_CHROMA, BASE_LUMA, QuantTables, scale_quant_tables

__all__ = [
    "BASE_CHROMA",
    "BASE_LUMA",
    "DarkenParams",
    "DatasetManifest",
    "DatasetTriplet",
    "LossReport",
    "QuantTables",
    "SUBSAMPLING_MODES",
    "binned_loss_stats",
    "darken",
    "generate_procedural_images",
    "jpeg_roundtrip",
    "load_manifest",
    "loss_map",
    "procedural_image",
    "rgb_to_ycbcr",
    "scale_quant_tables",
    "synthesize_dataset",
    "ycbcr_to_rgb",
]
