"""Frame roles, timestep conventions and the rectified-flow objective.

Convention: ``t = 1`` is clean data and ``t = 0`` is pure noise, so a noised
frame is ``t * clean + (1 - t) * noise`` and the regression target is
``clean - noise``.

Frames travel as a :class:`Frames` pair: ``mv`` with shape (B, 4, C, H, W) and
``uv`` with shape (B, C, H_uv, W_uv).  Frame ``f`` for ``f < 4`` is ``mv[:, f]``
and frame 4 is ``uv``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import torch

K_MAX = 1000
K_MIN = 15
NUM_VIEWS = 4
NUM_FRAMES = NUM_VIEWS + 1


class FrameRole(enum.IntEnum):
    DF = 0  # denoised
    CF = 1  # condition, lightly noised
    NF = 2  # nonsense, pure noise


class Task(str, enum.Enum):
    IMG2TEX = "img2tex"
    GEO2MV = "geo2mv"


@dataclass(frozen=True)
class TaskSpec:
    task: Task
    cf_view_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))


@dataclass
class Frames:
    mv: torch.Tensor  # (B, 4, C, H, W)
    uv: torch.Tensor  # (B, C, H_uv, W_uv)

    def frame(self, f: int) -> torch.Tensor:
        return self.mv[:, f] if f < NUM_VIEWS else self.uv

    def map(self, fn) -> "Frames":
        return Frames(fn(self.mv), fn(self.uv))

    def zip_map(self, other: "Frames", fn) -> "Frames":
        return Frames(fn(self.mv, other.mv), fn(self.uv, other.uv))

    @property
    def batch_size(self) -> int:
        return self.mv.shape[0]

    def shapes(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return tuple(self.mv.shape), tuple(self.uv.shape)


@dataclass
class FrameSequence:
    frames: Frames
    roles: tuple[FrameRole, ...]
    timesteps: torch.Tensor  # (B, 5)


def frame_roles(spec: TaskSpec) -> tuple[FrameRole, ...]:
    """Role of each of the 5 frames (4 views then the UV map)."""
    if spec.task is Task.IMG2TEX:
        if not 0 <= spec.cf_view_index < NUM_VIEWS:
            raise ValueError(f"cf_view_index must be in 0..{NUM_VIEWS - 1}, got {spec.cf_view_index}")
        roles = [FrameRole.DF] * NUM_FRAMES
        roles[spec.cf_view_index] = FrameRole.CF
        return tuple(roles)
    return (FrameRole.DF,) * NUM_VIEWS + (FrameRole.NF,)


def uv_only_roles(roles: Sequence[FrameRole]) -> tuple[FrameRole, ...]:
    """Ablation: non-condition views become nonsense frames, leaving UV the only DF."""
    return tuple(FrameRole.NF if (i < NUM_VIEWS and r is FrameRole.DF) else r for i, r in enumerate(roles))


def k_to_t(k: int) -> float:
    """Discrete noise level k in 0..1000 to continuous time (1 = clean)."""
    if not 0 <= k <= K_MAX:
        raise ValueError(f"k must be in 0..{K_MAX}, got {k}")
    return 1.0 - k / K_MAX


T_CF = k_to_t(K_MIN)
T_NF = k_to_t(K_MAX)


def shift_time(t: torch.Tensor | float, shift: float = 1.0):
    """Warp t so that more of [0, 1] is spent at high noise when shift > 1.

    The usual ``s * sigma / (1 + (s - 1) * sigma)`` map is applied to the noise
    level ``sigma = 1 - t``.
    """
    if shift == 1.0:
        return t
    sigma = 1.0 - t
    return 1.0 - shift * sigma / (1.0 + (shift - 1.0) * sigma)


def frame_timesteps(roles: Sequence[FrameRole], t_df: torch.Tensor) -> torch.Tensor:
    """(B, 5) per-frame times: DF frames share ``t_df``, CF -> 0.985, NF -> 0."""
    t_df = torch.as_tensor(t_df)
    if t_df.ndim == 0:
        t_df = t_df[None]
    cols = []
    for role in roles:
        if role is FrameRole.DF:
            cols.append(t_df)
        else:
            cols.append(torch.full_like(t_df, T_CF if role is FrameRole.CF else T_NF))
    return torch.stack(cols, dim=1)


def _check_shapes(a: Frames, b: Frames, what: str):
    if a.shapes() != b.shapes():
        raise ValueError(f"{what}: shape mismatch {a.shapes()} vs {b.shapes()}")


def _bcast(t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return t.reshape(t.shape + (1,) * (like.ndim - t.ndim)).to(like.dtype)


def noise_sequence(clean: Frames, roles: Sequence[FrameRole], t_df, noise: Frames) -> FrameSequence:
    """Interpolate every frame towards noise at its role-determined time."""
    _check_shapes(clean, noise, "noise_sequence")
    if len(roles) != NUM_FRAMES:
        raise ValueError(f"expected {NUM_FRAMES} roles, got {len(roles)}")
    t_df = torch.as_tensor(t_df, dtype=clean.mv.dtype)
    if t_df.ndim == 0:
        t_df = t_df.expand(clean.batch_size)
    ts = frame_timesteps(roles, t_df)
    t_mv = ts[:, :NUM_VIEWS]  # (B, 4)
    t_uv = ts[:, NUM_VIEWS]
    mv = _bcast(t_mv, clean.mv) * clean.mv + (1 - _bcast(t_mv, clean.mv)) * noise.mv
    uv = _bcast(t_uv, clean.uv) * clean.uv + (1 - _bcast(t_uv, clean.uv)) * noise.uv
    return FrameSequence(Frames(mv, uv), tuple(roles), ts)


def velocity_target(clean: Frames, noise: Frames) -> Frames:
    _check_shapes(clean, noise, "velocity_target")
    return clean.zip_map(noise, lambda c, n: c - n)


def loss_weight(t: torch.Tensor) -> torch.Tensor:
    """Symmetric bump 4 t (1 - t): 1 at t = 0.5, 0 at both ends."""
    return 4.0 * t * (1.0 - t)


def flow_loss(pred: Frames, target: Frames, roles: Sequence[FrameRole], t_df,
              weight_fn=loss_weight) -> torch.Tensor:
    """Weighted MSE over the elements of DF frames only.

    With a batch, each example's squared-error mean is weighted by
    ``weight_fn(t_df[b])`` and the weighted values are averaged.
    """
    _check_shapes(pred, target, "flow_loss")
    sq_sum = torch.zeros(pred.batch_size, dtype=pred.mv.dtype, device=pred.mv.device)
    count = 0
    for f, role in enumerate(roles):
        if role is not FrameRole.DF:
            continue
        diff = pred.frame(f) - target.frame(f)
        sq_sum = sq_sum + diff.pow(2).flatten(1).sum(1)
        count += diff[0].numel()
    if count == 0:
        return sq_sum.sum() * 0.0
    t_df = torch.as_tensor(t_df, dtype=sq_sum.dtype, device=sq_sum.device)
    w = weight_fn(t_df.expand(pred.batch_size) if t_df.ndim == 0 else t_df)
    return (w * sq_sum / count).mean()
