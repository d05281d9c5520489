"""Three-axis rotary embedding for a mixed-resolution MV + UV token sequence.

The head dimension is split into three equal blocks of ``head_dim / 6`` complex
pairs (time, row, column).  View tokens take time indices ``0..F_mv-1`` and UV
tokens continue right after them.  Both domains index their spatial
frequencies from zero on their own grid (extrapolation, no rescaling).  Rows
are ordered view tokens first (frame, row, col), then UV tokens.
"""

from __future__ import annotations

import torch


def axis_frequencies(d_part: int, base: float = 10000.0, dtype=torch.float64) -> torch.Tensor:
    """Angular frequencies base^(-i / d_part), i = 0..d_part-1, for one axis."""
    return base ** (-torch.arange(d_part, dtype=dtype) / d_part)


def freq_table(head_dim: int, max_len: int = 1024, base: float = 10000.0, dtype=torch.float64) -> torch.Tensor:
    """Rotation angles (max_len, head_dim/2) for positions 0..max_len-1.

    Columns are the time, row and column axis blocks side by side, each with
    its own frequency ladder.
    """
    if head_dim % 6:
        raise ValueError(f"head_dim={head_dim} must be divisible by 6")
    d_part = head_dim // 6
    pos = torch.arange(max_len, dtype=dtype)[:, None]
    ladder = axis_frequencies(d_part, base, dtype)[None]
    return torch.cat([pos * ladder] * 3, dim=1)


def rope_3d(mv_shape, uv_shape, head_dim: int, max_len: int = 1024, base: float = 10000.0,
            dtype=torch.float64) -> torch.Tensor:
    """Per-token rotation angles (N_mv + N_uv, head_dim/2)."""
    if head_dim % 6:
        raise ValueError(f"head_dim={head_dim} must be divisible by 6")
    d_part = head_dim // 6
    table = freq_table(head_dim, max_len, base, dtype)
    freq_t, freq_h, freq_w = table.split([d_part, d_part, d_part], dim=1)

    def block(t_slice, frames, height, width):
        ft = freq_t[t_slice].reshape(frames, 1, 1, -1).expand(frames, height, width, -1)
        fh = freq_h[:height].reshape(1, height, 1, -1).expand(frames, height, width, -1)
        fw = freq_w[:width].reshape(1, 1, width, -1).expand(frames, height, width, -1)
        return torch.cat([ft, fh, fw], dim=-1).reshape(frames * height * width, -1)

    mf, mh, mw = mv_shape
    uf, uh, uw = uv_shape
    if mf + uf > max_len or max(mh, mw, uh, uw) > max_len:
        raise ValueError("grid larger than the rotary table")
    rope_mv = block(slice(0, mf), mf, mh, mw)
    rope_uv = block(slice(mf, mf + uf), uf, uh, uw)
    return torch.cat([rope_mv, rope_uv], dim=0)


def apply_rope(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Rotate adjacent channel pairs of ``x`` (..., N, head_dim) by ``angles`` (N, head_dim/2)."""
    return rotate(x, angles.cos().to(x.dtype), angles.sin().to(x.dtype))


def rotate(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)
    return out.flatten(-2)
