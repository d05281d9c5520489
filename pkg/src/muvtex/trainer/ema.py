"""Online power-function EMA parameterized by relative standard deviation.

For an averaging profile proportional to ``tau ** gamma`` over the training
history, the relative width of the profile is

    sigma_rel = sqrt((gamma + 1) / ((gamma + 2) ** 2 * (gamma + 3)))

so ``gamma`` is the largest real root of
``gamma^3 + 7 gamma^2 + (16 - s) gamma + (12 - s) = 0`` with ``s = sigma_rel^-2``.
After the ``n``-th optimizer update (n >= 1) the running average is updated with

    beta_n = (1 - 1 / n) ** (gamma + 1)
    ema    = beta_n * ema + (1 - beta_n) * params   (computed as a lerp)

which tracks the power profile (weights ~ tau^gamma) over the history seen so
far; the first update copies the parameters (beta_1 = 0).
"""

from __future__ import annotations

import numpy as np
import torch


def std_to_exp(std: float) -> float:
    if std <= 0:
        return float("inf")
    s = float(std) ** -2
    roots = np.roots([1.0, 7.0, 16.0 - s, 12.0 - s])
    return float(roots.real.max())


def ema_beta(step: int, std: float) -> float:
    """Decay applied at optimizer update number ``step`` (1-based)."""
    if step < 1:
        raise ValueError("step counts from 1")
    gamma = std_to_exp(std)
    if not np.isfinite(gamma):
        return 0.0
    return (1.0 - 1.0 / step) ** (gamma + 1.0)


class PowerEMA:
    """Shadow copy of named parameters."""

    def __init__(self, named_params: dict[str, torch.Tensor], std: float = 0.05):
        self.std = std
        self.shadow = {k: v.detach().clone() for k, v in named_params.items()}

    @torch.no_grad()
    def update(self, named_params: dict[str, torch.Tensor], step: int) -> float:
        beta = ema_beta(step, self.std)
        for k, v in named_params.items():
            self.shadow[k].lerp_(v.detach(), 1.0 - beta)
        return beta

    @torch.no_grad()
    def copy_to(self, module: torch.nn.Module) -> None:
        for k, prm in module.named_parameters():
            prm.copy_(self.shadow[k])


def ema_update(ema_params: dict[str, torch.Tensor], params: dict[str, torch.Tensor], step: int,
               std: float = 0.05) -> dict[str, torch.Tensor]:
    """Functional form: returns new tensors, inputs untouched."""
    beta = ema_beta(step, std)
    return {k: torch.lerp(ema_params[k], params[k], 1.0 - beta) for k in params}
