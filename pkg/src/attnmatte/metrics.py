"""SAD, MSE, gradient and connectivity errors for alpha mattes.

Inputs are ``(H, W)`` float arrays in [0, 1]. SAD, Grad and Conn are divided
by 1000 when ``scaled`` is true (the usual reporting convention); MSE is never
scaled.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import ShapeError, check_alpha

SCALE = 1000.0
GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_THETA = 0.15


def _pair(pred, gt):
    pred = check_alpha(pred, "pred")
    gt = check_alpha(gt, "gt")
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    return pred, gt


def sad(pred, gt, scaled: bool = False) -> float:
    pred, gt = _pair(pred, gt)
    err = float(np.abs(pred - gt).sum())
    return err / SCALE if scaled else err


def mse_metric(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(((pred - gt) ** 2).mean())


def gaussian_derivative_kernels(sigma: float = GRAD_SIGMA, epsilon: float = 1e-2):
    """First-order Gaussian derivative filters ``(hx, hy)``, unit L2 norm.

    ``hx`` differentiates along columns (x), ``hy = hx.T`` along rows.
    """
    half = int(np.ceil(sigma * np.sqrt(-2 * np.log(np.sqrt(2 * np.pi) * sigma * epsilon))))
    u = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-u ** 2 / (2 * sigma ** 2)) / (sigma * np.sqrt(2 * np.pi))
    dg = -u * g / sigma ** 2
    hx = np.outer(g, dg)
    hx /= np.sqrt((hx ** 2).sum())
    return hx, hx.T


def image_gradient(alpha, sigma: float = GRAD_SIGMA):
    hx, hy = gaussian_derivative_kernels(sigma)
    gx = ndimage.convolve(alpha, hx, mode="nearest")
    gy = ndimage.convolve(alpha, hy, mode="nearest")
    return gx, gy


def gradient_error(pred, gt, sigma: float = GRAD_SIGMA, scaled: bool = False) -> float:
    """Sum over pixels of the squared norm of the gradient difference."""
    pred, gt = _pair(pred, gt)
    px, py = image_gradient(pred, sigma)
    gx, gy = image_gradient(gt, sigma)
    err = float(((px - gx) ** 2 + (py - gy) ** 2).sum())
    return err / SCALE if scaled else err


def connectivity_levels(step: float = CONN_STEP) -> np.ndarray:
    """Interior threshold levels ``step, 2*step, ...`` strictly below 1."""
    n = int(round(1.0 / step))
    return np.round(np.arange(1, n) * step, 12)


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask)  # 4-connectivity
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == counts.argmax()


def connectivity_error(pred, gt, step: float = CONN_STEP, theta: float = CONN_THETA,
                       scaled: bool = False) -> float:
    """Connectivity error from a threshold sweep.

    Each pixel gets the last level at which it still belonged to the largest
    4-connected component of ``{pred >= t} & {gt >= t}`` (1 if it never left
    it). Degrees of connectedness ``1 - d * [d >= theta]`` with
    ``d = alpha - level`` are compared in L1.
    """
    pred, gt = _pair(pred, gt)
    levels = connectivity_levels(step)
    level_map = np.full(pred.shape, -1.0)
    prev = 0.0
    for t in levels:
        omega = largest_component((pred >= t) & (gt >= t))
        level_map[(level_map == -1) & ~omega] = prev
        prev = t
    level_map[level_map == -1] = 1.0

    pd = pred - level_map
    gd = gt - level_map
    pred_phi = 1 - pd * (pd >= theta)
    gt_phi = 1 - gd * (gd >= theta)
    err = float(np.abs(pred_phi - gt_phi).sum())
    return err / SCALE if scaled else err


METRIC_NAMES = ("sad", "mse", "grad", "conn")


@dataclass
class MetricsReport:
    per_image: list[dict] = field(default_factory=list)
    aggregate: dict[str, float] = field(default_factory=dict)
    scaling: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "MetricsReport":
        with open(path) as f:
            return cls.from_json(f.read())

    def table(self) -> str:
        head = f"{'id':<32} {'SAD':>10} {'MSE':>10} {'Grad':>10} {'Conn':>10}"
        lines = [head, "-" * len(head)]
        for row in self.per_image:
            lines.append(f"{str(row['id']):<32} " + " ".join(
                f"{row[k]:>10.4f}" for k in METRIC_NAMES))
        lines.append("-" * len(head))
        lines.append(f"{'mean':<32} " + " ".join(
            f"{self.aggregate[k]:>10.4f}" for k in METRIC_NAMES))
        return "\n".join(lines)


def evaluate(pairs, ids=None, scaled: bool = True) -> MetricsReport:
    """Per-image metrics and their means for ``(pred, gt)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate needs at least one (pred, gt) pair")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(pairs))]
    if len(ids) != len(pairs):
        raise ValueError("ids and pairs differ in length")
    rows = []
    for id_, (pred, gt) in zip(ids, pairs):
        rows.append({
            "id": id_,
            "sad": sad(pred, gt, scaled=scaled),
            "mse": mse_metric(pred, gt),
            "grad": gradient_error(pred, gt, scaled=scaled),
            "conn": connectivity_error(pred, gt, scaled=scaled),
        })
    aggregate = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES}
    divisor = SCALE if scaled else 1.0
    scaling = {"sad": divisor, "mse": 1.0, "grad": divisor, "conn": divisor}
    return MetricsReport(rows, aggregate, scaling)
