"""Composite synthesis, manifests and augmented training crops."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import imaging
from .imaging import ShapeError

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")
CROP_SIZES = (512, 640, 800)
OUT_SIZE = 512
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class CompositeRecord:
    fg_id: str
    fg_path: str
    alpha_path: str
    bg_path: str
    composite_path: str
    seed: int


@dataclass
class Manifest:
    per_fg: int
    seed: int
    records: list[CompositeRecord]

    def __len__(self):
        return len(self.records)

    def dumps(self) -> str:
        header = {"version": MANIFEST_VERSION, "per_fg": self.per_fg, "seed": self.seed,
                  "count": len(self.records)}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, base_dir=None) -> "Manifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ManifestError("empty manifest (no header)")
        header = json.loads(lines[0])
        records = [CompositeRecord(**json.loads(ln)) for ln in lines[1:]]
        if base_dir is not None:
            records = [_resolve(r, Path(base_dir)) for r in records]
        return cls(int(header["per_fg"]), int(header["seed"]), records)

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        return cls.loads(path.read_text(), base_dir=path.parent)


def _resolve(rec: CompositeRecord, base: Path) -> CompositeRecord:
    def fix(p):
        return p if os.path.isabs(p) else str(base / p)
    return CompositeRecord(rec.fg_id, fix(rec.fg_path), fix(rec.alpha_path), fix(rec.bg_path),
                           fix(rec.composite_path), rec.seed)


def list_images(directory) -> list[str]:
    return sorted(str(p) for p in Path(directory).iterdir()
                  if p.suffix.lower() in IMAGE_EXTS)


def build_manifest(fg_set, alpha_set, bg_set, per_fg: int = 4, seed: int = 0,
                   out_dir: str = "composites") -> Manifest:
    """Assign ``per_fg`` backgrounds to every foreground.

    Foregrounds and mattes are paired by file stem. Backgrounds are drawn
    without replacement when there are enough of them. No files are touched;
    see :func:`render_composites`.
    """
    if per_fg < 1:
        raise ValueError("per_fg must be >= 1")
    if not bg_set:
        raise ManifestError("background set is empty")
    fg_by_stem = {Path(p).stem: str(p) for p in fg_set}
    alpha_by_stem = {Path(p).stem: str(p) for p in alpha_set}
    unpaired = sorted(set(fg_by_stem) ^ set(alpha_by_stem))
    if unpaired or len(fg_by_stem) != len(fg_set) or len(alpha_by_stem) != len(alpha_set):
        raise ManifestError(f"unpaired foreground/alpha files: {unpaired}")

    bg_set = [str(p) for p in bg_set]
    rng = np.random.default_rng(seed)
    records = []
    for stem in sorted(fg_by_stem):
        picks = rng.choice(len(bg_set), size=per_fg, replace=per_fg > len(bg_set))
        for k, b in enumerate(picks):
            idx = len(records)
            name = f"{stem}_{k:03d}_{Path(bg_set[b]).stem}.png"
            records.append(CompositeRecord(
                fg_id=stem,
                fg_path=fg_by_stem[stem],
                alpha_path=alpha_by_stem[stem],
                bg_path=bg_set[b],
                composite_path=str(Path(out_dir) / name),
                seed=int(np.random.SeedSequence([seed, idx]).generate_state(1)[0]),
            ))
    return Manifest(per_fg, seed, records)


def resize(array: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an ``(H, W)`` or ``(H, W, C)`` array, clipped to [0, 1]."""
    if array.shape[:2] == (height, width):
        return array.copy()
    t = torch.as_tensor(array, dtype=torch.float64)
    t = t[None, None] if t.dim() == 2 else t.permute(2, 0, 1)[None]
    antialias = height < array.shape[0] or width < array.shape[1]
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False,
                        antialias=antialias)[0]
    out = out[0] if array.ndim == 2 else out.permute(1, 2, 0)
    return out.clamp(0.0, 1.0).numpy()


def fit_background(bg: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scale ``bg`` to cover ``height x width`` keeping aspect, then center-crop."""
    bh, bw = bg.shape[:2]
    ratio = max(height / bh, width / bw)
    if ratio > 1:
        bg = resize(bg, int(np.ceil(bh * ratio)), int(np.ceil(bw * ratio)))
        bh, bw = bg.shape[:2]
    top = (bh - height) // 2
    left = (bw - width) // 2
    return bg[top:top + height, left:left + width]


def render_composites(manifest: Manifest) -> None:
    for rec in manifest.records:
        fg = imaging.read_image(rec.fg_path)
        alpha = imaging.read_alpha(rec.alpha_path)
        if fg.shape[:2] != alpha.shape:
            raise ShapeError(f"{rec.fg_path} and {rec.alpha_path} differ in size")
        bg = fit_background(imaging.read_image(rec.bg_path), *alpha.shape)
        Path(rec.composite_path).parent.mkdir(parents=True, exist_ok=True)
        imaging.write_image(rec.composite_path, imaging.composite(fg, bg, alpha))


def compose_dataset(fg_dir, alpha_dir, bg_dir, out_dir, per_fg: int = 4,
                    seed: int = 0) -> Manifest:
    """Build, render and save a manifest; paths are stored relative to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(
        [os.path.abspath(p) for p in list_images(fg_dir)],
        [os.path.abspath(p) for p in list_images(alpha_dir)],
        [os.path.abspath(p) for p in list_images(bg_dir)],
        per_fg=per_fg, seed=seed, out_dir=str(out_dir / "merged"),
    )
    render_composites(manifest)
    rel = Manifest(manifest.per_fg, manifest.seed, [
        CompositeRecord(r.fg_id, *(os.path.relpath(p, out_dir) for p in
                                   (r.fg_path, r.alpha_path, r.bg_path, r.composite_path)),
                        r.seed)
        for r in manifest.records])
    rel.save(out_dir / "manifest.jsonl")
    return manifest


# -- training crops ------------------------------------------------------------

@dataclass
class CropParams:
    center: tuple[int, int]
    size: int
    flip: bool


@dataclass
class TrainingSample:
    image: np.ndarray
    alpha: np.ndarray
    sentry_alpha: np.ndarray
    params: CropParams


def draw_crop_params(alpha: np.ndarray, rng: np.random.Generator,
                     crop_sizes=CROP_SIZES, flip_prob: float = 0.5) -> CropParams:
    """Crop size, transition-region center and flip flag, in that draw order."""
    size = int(crop_sizes[rng.integers(len(crop_sizes))])
    ys, xs = np.nonzero((alpha > 0) & (alpha < 1))
    if len(ys):
        k = rng.integers(len(ys))
        center = (int(ys[k]), int(xs[k]))
    else:
        center = (alpha.shape[0] // 2, alpha.shape[1] // 2)
    flip = bool(rng.random() < flip_prob)
    return CropParams(center, size, flip)


def crop_window(center, size, height, width):
    """Top-left corner and extent of a window centered at ``center``, shifted inward."""
    ch, cw = min(size, height), min(size, width)
    top = int(np.clip(center[0] - ch // 2, 0, height - ch))
    left = int(np.clip(center[1] - cw // 2, 0, width - cw))
    return top, left, ch, cw


def apply_crop(image, alpha, params: CropParams, out_size: int = OUT_SIZE) -> TrainingSample:
    h, w = alpha.shape
    top, left, ch, cw = crop_window(params.center, params.size, h, w)
    img = resize(image[top:top + ch, left:left + cw], out_size, out_size)
    a = resize(alpha[top:top + ch, left:left + cw], out_size, out_size)
    if params.flip:
        img = img[:, ::-1].copy()
        a = a[:, ::-1].copy()
    return TrainingSample(img, a, imaging.downsample_alpha(a, 4), params)


def sample_training_crop(image, alpha, rng: np.random.Generator, crop_sizes=CROP_SIZES,
                         out_size: int = OUT_SIZE, flip_prob: float = 0.5) -> TrainingSample:
    """Random transition-centered crop, resized to ``out_size`` and maybe flipped.

    Windows larger than the image along an axis are capped at the image
    extent on that axis.
    """
    image = imaging.check_rgb(image)
    alpha = imaging.check_alpha(alpha)
    if image.shape[:2] != alpha.shape:
        raise ShapeError(f"image {image.shape} and alpha {alpha.shape} differ")
    if min(alpha.shape) < out_size:
        raise ShapeError(f"image {alpha.shape} is smaller than {out_size} on some side")
    if out_size % 4:
        raise ShapeError("out_size must be divisible by 4")
    params = draw_crop_params(alpha, rng, crop_sizes, flip_prob)
    return apply_crop(image, alpha, params, out_size)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


class CompositeDataset:
    """All composites of a manifest held in memory (desk scale).

    Every file is read at construction so bad data fails before training.
    """

    def __init__(self, manifest: Manifest):
        if not manifest.records:
            raise ManifestError("manifest has no records")
        self.manifest = manifest
        self.images, self.alphas = [], []
        for rec in manifest.records:
            for p in (rec.composite_path, rec.alpha_path):
                if not os.path.isfile(p):
                    raise FileNotFoundError(p)
            image = imaging.read_image(rec.composite_path)
            alpha = imaging.read_alpha(rec.alpha_path)
            if image.shape[:2] != alpha.shape:
                raise ShapeError(f"{rec.composite_path} and {rec.alpha_path} differ in size")
            self.images.append(image)
            self.alphas.append(alpha)

    def __len__(self):
        return len(self.images)

    def sample(self, index, rng, **crop_kwargs) -> TrainingSample:
        return sample_training_crop(self.images[index], self.alphas[index], rng, **crop_kwargs)
