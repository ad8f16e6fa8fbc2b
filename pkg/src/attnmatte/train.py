"""Training loop, checkpoints, inference and dataset evaluation."""
from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import imaging, metrics
from .data import CROP_SIZES, OUT_SIZE, CompositeDataset, Manifest, ManifestError, sample_rng
from .losses import (FIRST_EPOCH_WEIGHTS, LATER_EPOCH_WEIGHTS, LossWeights, adversarial_loss,
                     mse_loss, sentry_loss, ssim_loss, total_loss)
from .model import BackboneConfig, MattingNet, PatchDiscriminator, to_tensor
from .optim import MomentumSGD, poly_lr

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    manifest: str = ""
    epochs: int = 20
    batch_size: int = 4
    lr: float = 0.007
    momentum: float = 0.9
    poly_power: float = 0.9
    weight_decay: float = 0.0
    disc_lr: float = 1e-4
    weights_first_epoch: tuple[float, ...] = FIRST_EPOCH_WEIGHTS.as_tuple()
    weights_later_epochs: tuple[float, ...] = LATER_EPOCH_WEIGHTS.as_tuple()
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    save_every: int = 1
    crop_sizes: tuple[int, ...] = CROP_SIZES
    out_size: int = OUT_SIZE
    model: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = BackboneConfig(**self.model)
        self.crop_sizes = tuple(int(s) for s in self.crop_sizes)
        self.weights_first_epoch = tuple(float(w) for w in self.weights_first_epoch)
        self.weights_later_epochs = tuple(float(w) for w in self.weights_later_epochs)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.save_every < 1:
            raise ConfigError("save_every must be >= 1")
        if len(self.weights_first_epoch) != 4 or len(self.weights_later_epochs) != 4:
            raise ConfigError("loss weights need four entries (adv, mse, ssim, sentry)")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["model"] = self.model.to_dict()
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def schedule_weights(self, epoch: int) -> LossWeights:
        if epoch < 1:
            raise ValueError(f"epoch is 1-based, got {epoch}")
        return LossWeights(*(self.weights_first_epoch if epoch == 1 else self.weights_later_epochs))


@dataclass
class TrainState:
    generator: MattingNet
    discriminator: PatchDiscriminator
    g_opt: MomentumSGD
    d_opt: MomentumSGD
    iteration: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)


def init_models(config: TrainConfig):
    """Generator and discriminator as initialised at iteration 1 of ``train``."""
    torch.manual_seed(config.seed)
    return MattingNet(config.model), PatchDiscriminator()


def _batch(samples):
    image = torch.stack([to_tensor(s.image)[0] for s in samples])
    alpha = torch.stack([to_tensor(s.alpha)[0] for s in samples])
    return image, alpha


def train_step(state: TrainState, image, alpha, epoch: int, lr: float,
               weights: LossWeights | None = None):
    """One generator update followed by one discriminator update."""
    G, D = state.generator, state.discriminator
    G.train()
    out = G(image)
    _, adv = adversarial_loss(None, D(image, out.alpha))
    breakdown = total_loss(adv, mse_loss(out.alpha, alpha), ssim_loss(out.alpha, alpha),
                           sentry_loss(out.sentry_alpha, alpha), epoch, weights=weights)
    record = breakdown.as_dict()
    if not all(math.isfinite(v) for v in record.values()):
        return record, None

    state.g_opt.zero_grad(set_to_none=True)
    breakdown.total.backward()
    state.g_opt.set_lr(lr)
    state.g_opt.step()

    state.d_opt.zero_grad(set_to_none=True)
    d_loss, _ = adversarial_loss(D(image, alpha), D(image, out.alpha.detach()))
    d_loss.backward()
    state.d_opt.step()
    return record, d_loss.item()


def train(config: TrainConfig, dataset: CompositeDataset | None = None) -> TrainState:
    if dataset is None:
        try:
            manifest = Manifest.load(config.manifest)
        except OSError as e:
            raise ManifestError(f"cannot read manifest {config.manifest!r}: {e}") from e
        dataset = CompositeDataset(manifest)
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    G, D = init_models(config)
    state = TrainState(
        G, D,
        MomentumSGD(G.parameters(), config.lr, config.momentum, config.weight_decay),
        MomentumSGD(D.parameters(), config.disc_lr, config.momentum),
    )
    n = len(dataset)
    per_epoch = math.ceil(n / config.batch_size)
    max_iter = config.epochs * per_epoch
    crop_kwargs = dict(crop_sizes=config.crop_sizes, out_size=config.out_size)

    with open(ckpt_dir / "train_log.jsonl", "w") as log_file:
        for epoch in range(1, config.epochs + 1):
            state.epoch = epoch
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            for b in range(per_epoch):
                idx = order[b * config.batch_size:(b + 1) * config.batch_size]
                samples = [dataset.sample(int(i), sample_rng(config.seed, epoch, int(i)),
                                          **crop_kwargs) for i in idx]
                image, alpha = _batch(samples)
                lr = poly_lr(config.lr, state.iteration, max_iter, config.poly_power)
                record, d_loss = train_step(state, image, alpha, epoch, lr,
                                            config.schedule_weights(epoch))
                record.update(iteration=state.iteration + 1, epoch=epoch, lr=lr, disc=d_loss)
                if d_loss is None or not math.isfinite(d_loss):
                    record["event"] = "non_finite_loss"
                    log_file.write(json.dumps(record) + "\n")
                    raise NonFiniteLossError(f"non-finite loss at iteration {state.iteration + 1}: "
                                             f"{record}")
                state.iteration += 1
                state.history.append(record)
                log_file.write(json.dumps(record) + "\n")
                log.info("epoch %d iter %d total %.5f", epoch, state.iteration, record["total"])
            if epoch % config.save_every == 0 or epoch == config.epochs:
                path = ckpt_dir / f"epoch_{epoch:03d}.pt"
                save_checkpoint(path, G, config.model, discriminator=D, epoch=epoch,
                                iteration=state.iteration)
                state.checkpoints.append(str(path))
    return state


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, generator: MattingNet, model_config: BackboneConfig,
                    discriminator: PatchDiscriminator | None = None, **meta) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model_config.to_dict(),
        "generator": generator.state_dict(),
        "meta": meta,
    }
    if discriminator is not None:
        payload["discriminator"] = discriminator.state_dict()
    # torch names the zip root after the file; a buffer keeps bytes path-independent
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expected_config: BackboneConfig | None = None):
    """Return ``(generator, payload)``; the generator is in eval mode."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    try:
        cfg = BackboneConfig(**payload["model_config"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: invalid model config: {e}") from e
    if expected_config is not None and cfg != expected_config:
        raise ConfigError(f"{path}: checkpoint config {cfg} != expected {expected_config}")
    G = MattingNet(cfg)
    try:
        G.load_state_dict(payload["generator"])
    except RuntimeError as e:
        raise ConfigError(f"{path}: parameters do not match the embedded config: {e}") from e
    G.eval()
    return G, payload


# -- inference -----------------------------------------------------------------

@torch.no_grad()
def predict_alpha(model, image: np.ndarray) -> np.ndarray:
    """Alpha for an ``(H, W, 3)`` image of any size; pads to multiples of 8."""
    image = imaging.check_rgb(image)
    h, w = image.shape[:2]
    ph, pw = -h % 8, -w % 8
    x = to_tensor(image)
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    model.eval()
    alpha = model(x).alpha[0, 0, :h, :w]
    return alpha.clamp(0.0, 1.0).double().numpy()


def infer(checkpoint, image_path, out_path, model=None) -> np.ndarray:
    if model is None:
        model, _ = load_checkpoint(checkpoint)
    alpha = predict_alpha(model, imaging.read_image(image_path))
    imaging.write_alpha(out_path, alpha)
    return alpha


def evaluate_dataset(checkpoint, manifest, model=None, pred_dir=None) -> metrics.MetricsReport:
    """Infer every composite in the manifest and score it on the whole image.

    Predictions are quantised to 8 bits as written by ``infer`` before scoring.
    """
    if not isinstance(manifest, Manifest):
        manifest = Manifest.load(manifest)
    if not manifest.records:
        raise ManifestError("manifest has no records")
    for rec in manifest.records:
        if not os.path.isfile(rec.alpha_path):
            raise FileNotFoundError(f"missing ground truth {rec.alpha_path}")
    if model is None:
        model, _ = load_checkpoint(checkpoint)
    pairs, ids = [], []
    for rec in manifest.records:
        pred = predict_alpha(model, imaging.read_image(rec.composite_path))
        pred = imaging.to_uint8(pred) / 255.0
        if pred_dir is not None:
            Path(pred_dir).mkdir(parents=True, exist_ok=True)
            imaging.write_alpha(Path(pred_dir) / Path(rec.composite_path).name, pred)
        pairs.append((pred, imaging.read_alpha(rec.alpha_path)))
        ids.append(Path(rec.composite_path).stem)
    return metrics.evaluate(pairs, ids=ids)
