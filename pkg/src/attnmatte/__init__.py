"""Trimap-free alpha matting with hierarchical channel and spatial attention."""

from .imaging import ShapeError, composite, downsample_alpha, generate_trimap
from .model import BackboneConfig, MattingNet, PatchDiscriminator

__all__ = [
    "BackboneConfig",
    "MattingNet",
    "PatchDiscriminator",
    "ShapeError",
    "composite",
    "downsample_alpha",
    "generate_trimap",
]
__version__ = "0.1.0"
