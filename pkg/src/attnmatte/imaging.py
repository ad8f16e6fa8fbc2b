"""Image containers, compositing, trimap morphology and alpha resampling.

Images are plain numpy arrays: RGB images are ``(H, W, 3)`` floats in [0, 1],
alpha mattes are ``(H, W)`` floats in [0, 1] and trimaps are ``(H, W)`` uint8
arrays over the three labels ``{0, 128, 255}``.
"""
from __future__ import annotations

import os

import numpy as np
from PIL import Image
from scipy import ndimage

BG = 0
UNKNOWN = 128
FG = 255
TRIMAP_LABELS = (BG, UNKNOWN, FG)


class ShapeError(ValueError):
    """Raised when array dimensions violate an operation's contract."""


def check_rgb(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"{name} must be HxWx3, got {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ShapeError(f"{name} is empty: {image.shape}")
    return image


def check_alpha(alpha: np.ndarray, name: str = "alpha") -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ShapeError(f"{name} must be HxW, got {alpha.shape}")
    if alpha.shape[0] < 1 or alpha.shape[1] < 1:
        raise ShapeError(f"{name} is empty: {alpha.shape}")
    return alpha


def composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Blend ``fg`` over ``bg``: ``alpha * fg + (1 - alpha) * bg`` per channel."""
    fg = check_rgb(fg, "fg")
    bg = check_rgb(bg, "bg")
    alpha = check_alpha(alpha)
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape:
        raise ShapeError(
            f"fg {fg.shape}, bg {bg.shape} and alpha {alpha.shape} must share HxW"
        )
    a = alpha[..., None]
    out = a * fg + (1.0 - a) * bg
    return np.clip(out, 0.0, 1.0)


def disk(radius: int) -> np.ndarray:
    """Boolean disk structuring element, ``x**2 + y**2 <= radius**2``."""
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def generate_trimap(alpha: np.ndarray, radius: int) -> np.ndarray:
    """Trimap from an alpha matte by eroding both certain regions with a disk.

    FG is the erosion of ``{alpha == 1}``, BG the erosion of ``{alpha == 0}``
    and everything else is UNKNOWN, so the transition band ``0 < alpha < 1``
    is always UNKNOWN. Pixels outside the image count as members of the set
    being eroded, so a fully opaque matte stays fully FG.
    """
    if int(radius) != radius or radius < 1:
        raise ValueError(f"radius must be an integer >= 1, got {radius}")
    alpha = check_alpha(alpha)
    se = disk(int(radius))
    fg = ndimage.binary_erosion(alpha >= 1.0, structure=se, border_value=1)
    bg = ndimage.binary_erosion(alpha <= 0.0, structure=se, border_value=1)
    trimap = np.full(alpha.shape, UNKNOWN, dtype=np.uint8)
    trimap[fg] = FG
    trimap[bg] = BG
    return trimap


def downsample_alpha(alpha: np.ndarray, factor: int) -> np.ndarray:
    """Area-average pooling over ``factor x factor`` blocks."""
    alpha = check_alpha(alpha)
    h, w = alpha.shape
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"factor {factor} does not divide alpha shape {alpha.shape}")
    blocks = alpha.reshape(h // factor, factor, w // factor, factor)
    return np.clip(blocks.mean(axis=(1, 3)), 0.0, 1.0)


# -- PNG exchange ------------------------------------------------------------

def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_alpha(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(check_rgb(image))).save(path)


def write_alpha(path: str | os.PathLike, alpha: np.ndarray) -> None:
    Image.fromarray(to_uint8(check_alpha(alpha))).save(path)


def write_trimap(path: str | os.PathLike, trimap: np.ndarray) -> None:
    trimap = np.asarray(trimap)
    if not np.isin(trimap, TRIMAP_LABELS).all():
        raise ValueError("trimap holds values outside {0, 128, 255}")
    Image.fromarray(trimap.astype(np.uint8)).save(path)


def read_trimap(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        trimap = np.asarray(im.convert("L"), dtype=np.uint8)
    if not np.isin(trimap, TRIMAP_LABELS).all():
        raise ValueError(f"{path}: not a {{0, 128, 255}} trimap")
    return trimap
