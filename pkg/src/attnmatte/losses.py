"""Training objective: adversarial, MSE, SSIM and sentry terms.

All losses take ``(N, 1, H, W)`` tensors and are differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .imaging import ShapeError

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    adv: float
    mse: float
    ssim: float
    sentry: float

    def as_tuple(self):
        return (self.adv, self.mse, self.ssim, self.sentry)


FIRST_EPOCH_WEIGHTS = LossWeights(adv=0.05, mse=1.0, ssim=0.1, sentry=0.3)
LATER_EPOCH_WEIGHTS = LossWeights(adv=0.05, mse=1.0, ssim=0.025, sentry=0.1)


def loss_weights(epoch: int) -> LossWeights:
    """Balance coefficients for a 1-based epoch index."""
    if epoch < 1:
        raise ValueError(f"epoch is 1-based, got {epoch}")
    return FIRST_EPOCH_WEIGHTS if epoch == 1 else LATER_EPOCH_WEIGHTS


@dataclass
class LossBreakdown:
    adv: object
    mse: object
    ssim: object
    sentry: object
    total: object

    def as_dict(self) -> dict[str, float]:
        out = {}
        for k in ("adv", "mse", "ssim", "sentry", "total"):
            v = getattr(self, k)
            out[k] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return out


def total_loss(adv, mse, ssim, sentry, epoch: int,
               weights: LossWeights | None = None) -> LossBreakdown:
    """Weighted sum of the four terms with the epoch's coefficients.

    ``weights`` overrides the default schedule. Works for python floats and
    tensors alike, so the same call builds the training objective and checks it.
    """
    w = loss_weights(epoch) if weights is None else weights
    total = w.adv * adv + w.mse * mse + w.ssim * ssim + w.sentry * sentry
    return LossBreakdown(adv, mse, ssim, sentry, total)


def _check_same(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} and gt {tuple(gt.shape)} differ")


def mse_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check_same(pred, gt)
    return ((pred - gt) ** 2).mean()


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-x ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(pred: torch.Tensor, gt: torch.Tensor, window_size: int = 11, sigma: float = 1.5,
         data_range: float = 1.0) -> torch.Tensor:
    """Mean SSIM over all valid (unpadded) Gaussian windows.

    The window shrinks to the image when the image is smaller than it.
    """
    _check_same(pred, gt)
    if pred.dim() != 4 or pred.shape[1] != 1:
        raise ShapeError(f"expected Nx1xHxW mattes, got {tuple(pred.shape)}")
    size = min(window_size, pred.shape[2], pred.shape[3])
    win = gaussian_window(size, sigma, pred.dtype).to(pred.device)[None, None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    mu_p = F.conv2d(pred, win)
    mu_g = F.conv2d(gt, win)
    var_p = F.conv2d(pred * pred, win) - mu_p ** 2
    var_g = F.conv2d(gt * gt, win) - mu_g ** 2
    cov = F.conv2d(pred * gt, win) - mu_p * mu_g

    num = (2 * mu_p * mu_g + c1) * (2 * cov + c2)
    den = (mu_p ** 2 + mu_g ** 2 + c1) * (var_p + var_g + c2)
    return (num / den).mean()


def ssim_loss(pred: torch.Tensor, gt: torch.Tensor, **kwargs) -> torch.Tensor:
    return 1.0 - ssim(pred, gt, **kwargs)


def _clamp_scores(scores: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(scores).all():
        raise FloatingPointError(f"{name} scores contain non-finite values")
    if (scores < -SCORE_EPS).any() or (scores > 1 + SCORE_EPS).any():
        raise FloatingPointError(f"{name} scores fall outside [0, 1]")
    return scores.clamp(SCORE_EPS, 1 - SCORE_EPS)


def adversarial_loss(real_scores: torch.Tensor | None, fake_scores: torch.Tensor):
    """Return ``(disc_loss, gen_loss)``.

    ``disc_loss = -mean(log D_real) - mean(log(1 - D_fake))`` and the generator
    uses the non-saturating ``-mean(log D_fake)``. ``disc_loss`` is None when
    ``real_scores`` is None, for the generator-only pass.
    """
    fake = _clamp_scores(fake_scores, "fake")
    gen = -torch.log(fake).mean()
    disc = None
    if real_scores is not None:
        real = _clamp_scores(real_scores, "real")
        disc = -(torch.log(real).mean() + torch.log1p(-fake).mean())
    return disc, gen


def downsample_alpha(alpha: torch.Tensor, factor: int = 4) -> torch.Tensor:
    h, w = alpha.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"factor {factor} does not divide {h}x{w}")
    return F.avg_pool2d(alpha, factor)


def sentry_loss(sentry_pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """MSE between the quarter-resolution prediction and the 4x-pooled target."""
    sh, sw = sentry_pred.shape[-2:]
    gh, gw = gt.shape[-2:]
    if gh != 4 * sh or gw != 4 * sw:
        raise ShapeError(f"sentry {sh}x{sw} is not a quarter of gt {gh}x{gw}")
    return mse_loss(sentry_pred, downsample_alpha(gt, 4))

