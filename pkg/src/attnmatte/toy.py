"""Synthetic foregrounds, mattes and backgrounds for desk-scale runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import imaging


def soft_blob(size: int, rng: np.random.Generator, edge: float = 4.0) -> np.ndarray:
    """Random ellipse matte with a linear soft edge ``edge`` pixels wide."""
    h = w = size
    cy, cx = rng.uniform(0.35, 0.65, 2) * size
    ry, rx = rng.uniform(0.18, 0.32, 2) * size
    theta = rng.uniform(0, np.pi)
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = y - cy, x - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    r = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    dist = (1.0 - r) * min(rx, ry)  # approx signed distance to the boundary
    return np.clip(0.5 + dist / edge, 0.0, 1.0)


def textured(size: int, rng: np.random.Generator, base=None) -> np.ndarray:
    """Smooth colour gradient plus stripes, values in [0, 1]."""
    y, x = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(0, 1, 3) if base is None else np.asarray(base, dtype=np.float64)
    slope = rng.uniform(-0.3, 0.3, (2, 3))
    freq, phase = rng.uniform(4, 12), rng.uniform(0, 2 * np.pi)
    stripes = 0.1 * np.sin(2 * np.pi * freq * (x + y) + phase)
    img = base + x[..., None] * slope[0] + y[..., None] * slope[1] + stripes[..., None]
    return np.clip(img, 0.0, 1.0)


def make_toy_set(out_dir, n_fg: int = 4, n_bg: int = 8, size: int = 96, seed: int = 0):
    """Write ``fg/``, ``alpha/`` and ``bg/`` PNG folders under ``out_dir``."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    for sub in ("fg", "alpha", "bg"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i in range(n_fg):
        imaging.write_image(out / "fg" / f"fg{i:03d}.png", textured(size, rng))
        imaging.write_alpha(out / "alpha" / f"fg{i:03d}.png", soft_blob(size, rng))
    for i in range(n_bg):
        imaging.write_image(out / "bg" / f"bg{i:03d}.png", textured(size + 16, rng))
    return out


def training_set_sad(model, dataset) -> float:
    """Summed whole-image SAD of ``model`` over every composite in ``dataset``."""
    from .metrics import sad
    from .train import predict_alpha
    return float(sum(sad(predict_alpha(model, dataset.images[i]), dataset.alphas[i])
                     for i in range(len(dataset))))


def overfit_run(work_dir, iterations: int = 200, n_fg: int = 4, batch_size: int = 2,
                size: int = 96, out_size: int = 64, seed: int = 0, model=None) -> dict:
    """Train on ``n_fg`` toy composites and report training-set SAD before and after.

    The "before" value uses the generator exactly as it enters iteration 1.
    """
    import math

    from .data import CompositeDataset, Manifest, compose_dataset
    from .train import TrainConfig, init_models, train

    work = Path(work_dir)
    make_toy_set(work / "src", n_fg=n_fg, n_bg=n_fg, size=size, seed=seed)
    compose_dataset(work / "src" / "fg", work / "src" / "alpha", work / "src" / "bg",
                    work / "data", per_fg=1, seed=seed)
    dataset = CompositeDataset(Manifest.load(work / "data" / "manifest.jsonl"))
    per_epoch = math.ceil(len(dataset) / batch_size)
    if iterations % per_epoch:
        raise ValueError(f"iterations must be a multiple of {per_epoch}")
    epochs = iterations // per_epoch
    cfg = TrainConfig(manifest=str(work / "data" / "manifest.jsonl"), epochs=epochs,
                      batch_size=batch_size, seed=seed, save_every=epochs,
                      crop_sizes=(out_size, (out_size + size) // 2, size), out_size=out_size,
                      checkpoint_dir=str(work / "ckpt"), model=model or {})
    initial, _ = init_models(cfg)
    sad_initial = training_set_sad(initial, dataset)
    state = train(cfg, dataset)
    return {"sad_initial": sad_initial, "sad_final": training_set_sad(state.generator, dataset),
            "history": state.history, "checkpoint": state.checkpoints[-1], "config": cfg}
