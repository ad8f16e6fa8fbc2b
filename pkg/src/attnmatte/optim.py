"""Momentum SGD with an externally driven step size, and the poly schedule."""
from __future__ import annotations

import torch
from torch.optim import Optimizer


def poly_lr(base: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    """``base * (1 - iteration / max_iter) ** power``."""
    if max_iter <= 0:
        raise ValueError("max_iter must be positive")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** power


class MomentumSGD(Optimizer):
    """``v <- m*v - lr*g; p <- p + v``.

    Unlike ``torch.optim.SGD`` the step size enters the velocity, so a
    changing ``lr`` only affects the current gradient's contribution.
    """

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        super().__init__(params, dict(lr=lr, momentum=momentum, weight_decay=weight_decay))

    def set_lr(self, lr: float) -> None:
        for group in self.param_groups:
            group["lr"] = lr

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            lr, m, wd = group["lr"], group["momentum"], group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                g = p.grad
                if wd:
                    g = g.add(p, alpha=wd)
                state = self.state[p]
                if "velocity" not in state:
                    state["velocity"] = torch.zeros_like(p)
                v = state["velocity"]
                v.mul_(m).sub_(g, alpha=lr)
                p.add_(v)
        return loss
