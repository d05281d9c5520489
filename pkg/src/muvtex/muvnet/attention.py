"""Attention with geometry embeddings added to rotated queries and keys."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .lora import LoRALinear
from .rope import rotate


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, n, d = x.shape
    return x.view(b, n, heads, d // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def geo_sdpa(q, k, v, rope_q, rope_k, geo_q=None, geo_k=None):
    """softmax((rot(q) + g_q)(rot(k) + g_k)^T / sqrt(d)) v.

    ``q``/``k``/``v`` are (B, heads, N, head_dim); ``rope_*`` are (cos, sin)
    pairs of shape (N, head_dim/2); ``geo_*`` are (B, heads, N, head_dim) or
    None.  Values receive neither rotation nor geometry.
    """
    q = rotate(q, *rope_q)
    k = rotate(k, *rope_k)
    if geo_q is not None:
        q = q + geo_q
    if geo_k is not None:
        k = k + geo_k
    return F.scaled_dot_product_attention(q, k, v)


class GeoAttention(nn.Module):
    """Q from ``token_q``, K/V from ``token_e``; geometry added after rotation."""

    def __init__(self, dim: int, heads: int, lora_rank: int = 0, lora_alpha: float = 1.0, qk_norm: bool = True):
        super().__init__()
        self.heads = heads
        self.q = LoRALinear(dim, dim, lora_rank, lora_alpha)
        self.k = LoRALinear(dim, dim, lora_rank, lora_alpha)
        self.v = LoRALinear(dim, dim, lora_rank, lora_alpha)
        self.o = LoRALinear(dim, dim, lora_rank, lora_alpha)
        head_dim = dim // heads
        self.q_norm = RMSNorm(head_dim) if qk_norm else nn.Identity()
        self.k_norm = RMSNorm(head_dim) if qk_norm else nn.Identity()

    def forward(self, token_q, token_e, rope_q, rope_e, geo_q=None, geo_e=None):
        if geo_q is not None and geo_q.shape[:2] != token_q.shape[:2]:
            raise ValueError(f"geo_q {tuple(geo_q.shape)} misaligned with token_q {tuple(token_q.shape)}")
        if geo_e is not None and geo_e.shape[:2] != token_e.shape[:2]:
            raise ValueError(f"geo_e {tuple(geo_e.shape)} misaligned with token_e {tuple(token_e.shape)}")
        if rope_q[0].shape[0] != token_q.shape[1] or rope_e[0].shape[0] != token_e.shape[1]:
            raise ValueError("rotary table rows do not match token counts")
        h = self.heads
        q = self.q_norm(split_heads(self.q(token_q), h))
        k = self.k_norm(split_heads(self.k(token_e), h))
        v = split_heads(self.v(token_e), h)
        gq = split_heads(geo_q, h) if geo_q is not None else None
        ge = split_heads(geo_e, h) if geo_e is not None else None
        out = geo_sdpa(q, k, v, rope_q, rope_e, gq, ge)
        return self.o(merge_heads(out))
