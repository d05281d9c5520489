from __future__ import annotations

import math

import torch
import torch.nn as nn


class LoRALinear(nn.Module):
    """Linear layer with an optional low-rank additive adapter.

    Effective weight is ``W + (alpha / rank) * B @ A`` with ``A`` (rank, in) and
    ``B`` (out, rank).  ``B`` starts at zero, so a fresh adapter leaves the
    output unchanged.  ``rank=0`` gives a plain linear layer with the same
    parameter names for the base weights.
    """

    def __init__(self, in_features: int, out_features: int, rank: int = 0, alpha: float = 1.0, bias: bool = True):
        super().__init__()
        self.base = nn.Linear(in_features, out_features, bias=bias)
        self.rank = rank
        self.scaling = alpha / rank if rank else 0.0
        self.lora_enabled = rank > 0
        if rank:
            self.lora_A = nn.Parameter(torch.empty(rank, in_features))
            self.lora_B = nn.Parameter(torch.zeros(out_features, rank))
            nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.base(x)
        if self.rank and self.lora_enabled:
            out = out + self.scaling * ((x @ self.lora_A.t()) @ self.lora_B.t())
        return out

    def merged_weight(self) -> torch.Tensor:
        w = self.base.weight
        if self.rank and self.lora_enabled:
            w = w + self.scaling * self.lora_B @ self.lora_A
        return w


def set_lora_enabled(module: nn.Module, enabled: bool) -> None:
    for m in module.modules():
        if isinstance(m, LoRALinear) and m.rank:
            m.lora_enabled = enabled
