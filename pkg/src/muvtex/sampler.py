"""Euler sampling of the joint view/UV sequence, evaluation metrics and previews."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .geomesh import CameraRig, TexturedAsset, UVGeometryMaps, ViewBuffers, bake_views_to_uv, rasterize_views
from .geomesh.store import write_png
from .seqspace import (NUM_VIEWS, T_CF, FrameRole, Frames, FrameSequence, Task, TaskSpec, frame_roles,
                       frame_timesteps, shift_time, uv_only_roles)

PSNR_CAP = 99.0

ModelFn = Callable[[Frames, torch.Tensor, Frames, torch.Tensor], Frames]


@dataclass
class SampleConfig:
    steps: int = 30
    task: Task = Task.IMG2TEX
    cf_view_index: int = 0
    seed: int = 0
    flow_shift: float = 1.0
    uv_only: bool = False  # views are left as noise (matches the UV-only training ablation)

    def __post_init__(self):
        self.task = Task(self.task)
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.task is Task.IMG2TEX and not 0 <= self.cf_view_index < NUM_VIEWS:
            raise ValueError(f"cf_view_index must be in 0..{NUM_VIEWS - 1}, got {self.cf_view_index}")

    @property
    def roles(self) -> tuple[FrameRole, ...]:
        roles = frame_roles(TaskSpec(self.task, self.cf_view_index))
        return uv_only_roles(roles) if self.uv_only and self.task is Task.IMG2TEX else roles

    def time_grid(self) -> np.ndarray:
        grid = np.linspace(0.0, 1.0, self.steps + 1)
        return np.asarray(shift_time(grid, self.flow_shift), dtype=np.float64)


def draw_noise(seed: int, mv_shape: Sequence[int], uv_shape: Sequence[int], dtype=torch.float32) -> Frames:
    """Seeded Gaussian noise for the view stack and the UV frame."""
    rng = np.random.default_rng(seed)
    mv = rng.standard_normal(tuple(mv_shape))
    uv = rng.standard_normal(tuple(uv_shape))
    return Frames(torch.from_numpy(mv).to(dtype), torch.from_numpy(uv).to(dtype))


def _set_frame(frames: Frames, f: int, value: torch.Tensor) -> Frames:
    if f < NUM_VIEWS:
        mv = frames.mv.clone()
        mv[:, f] = value
        return Frames(mv, frames.uv)
    return Frames(frames.mv, value.clone())


def _select(roles, role: FrameRole, a: Frames, b: Frames) -> Frames:
    """Frame-wise choose ``a`` where the role matches, else ``b``."""
    mask_mv = torch.tensor([r is role for r in roles[:NUM_VIEWS]])
    m = mask_mv.view(1, NUM_VIEWS, 1, 1, 1)
    mv = torch.where(m, a.mv, b.mv)
    uv = a.uv if roles[NUM_VIEWS] is role else b.uv
    return Frames(mv, uv)


@torch.no_grad()
def euler_sample(model_fn: ModelFn, geo: Frames, labels: torch.Tensor, cond_frame: torch.Tensor | None,
                 cfg: SampleConfig, *, noise: Frames | None = None, channels: int = 3,
                 dtype=torch.float32) -> FrameSequence:
    """Integrate from t=0 to t=1 with ``cfg.steps`` uniform Euler steps.

    DF frames start from the seeded noise and follow ``x += dt * u``.  The CF
    frame is held at ``0.985 * cond + 0.015 * noise`` throughout and its
    predicted velocity is ignored.  The NF frame stays pure noise.  DF frames
    are clamped to [-1, 1] at the end.  Returns the sequence at t=1 with the
    same roles; use :func:`output_frames` to drop the NF frame.
    """
    roles = cfg.roles
    b = geo.batch_size
    mv_shape = (b, NUM_VIEWS, channels) + tuple(geo.mv.shape[-2:])
    uv_shape = (b, channels) + tuple(geo.uv.shape[-2:])
    if cfg.task is Task.IMG2TEX:
        if cond_frame is None:
            raise ValueError("img2tex sampling needs a condition view")
        if tuple(cond_frame.shape) != (b, channels) + tuple(geo.mv.shape[-2:]):
            raise ValueError(f"condition view shape {tuple(cond_frame.shape)} does not match {mv_shape[:1] + mv_shape[2:]}")
    if noise is None:
        noise = draw_noise(cfg.seed, mv_shape, uv_shape, dtype)
    elif noise.shapes() != (mv_shape, uv_shape):
        raise ValueError(f"noise shapes {noise.shapes()} do not match {(mv_shape, uv_shape)}")

    x = Frames(noise.mv.clone(), noise.uv.clone())
    if cfg.task is Task.IMG2TEX:
        f = cfg.cf_view_index
        pinned = T_CF * cond_frame.to(x.mv.dtype) + (1.0 - T_CF) * noise.frame(f)
        x = _set_frame(x, f, pinned)

    grid = cfg.time_grid()
    for i in range(cfg.steps):
        t0, t1 = float(grid[i]), float(grid[i + 1])
        ts = frame_timesteps(roles, torch.full((b,), t0, dtype=x.mv.dtype))
        u = model_fn(x, ts, geo, labels)
        stepped = x.zip_map(u, lambda a, v: a + (t1 - t0) * v.to(a.dtype))
        x = _select(roles, FrameRole.DF, stepped, x)

    x = _select(roles, FrameRole.DF, x.map(lambda a: a.clamp(-1.0, 1.0)), x)
    final_t = frame_timesteps(roles, torch.ones(b, dtype=x.mv.dtype))
    return FrameSequence(x, roles, final_t)


def output_frames(seq: FrameSequence) -> dict[str, torch.Tensor]:
    """Frames worth keeping: every non-NF frame, keyed ``view_i`` / ``uv``."""
    out = {}
    for f, role in enumerate(seq.roles):
        if role is FrameRole.NF:
            continue
        out[f"view_{f}" if f < NUM_VIEWS else "uv"] = seq.frames.frame(f)
    return out


# ---------------------------------------------------------------- metrics


def masked_psnr(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """PSNR in dB for [0, 1] images over ``mask`` pixels, capped at 99."""
    mask = np.asarray(mask) > 0.5
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no valid pixels to score")
    d = np.asarray(pred, dtype=np.float64)[mask] - np.asarray(target, dtype=np.float64)[mask]
    mse = float(np.mean(d * d))
    if mse <= 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(1.0 / mse)))


def _hwc_unit(x: torch.Tensor | np.ndarray) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().double().numpy()
    return np.moveaxis((np.asarray(x, dtype=np.float64) + 1.0) * 0.5, 0, -1)


@dataclass
class EvalReport:
    """Scores for one generated sample.

    ``uv_psnr`` and ``consistency_mae`` are ``None`` when no UV frame was
    generated (geo2mv).  Views left as noise score ``None`` in
    ``per_view_psnr``, and consistency is ``None`` when no view was generated.
    """

    uv_psnr: float | None
    consistency_mae: float | None
    coverage_frac: float
    per_view_psnr: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(asset: TexturedAsset, views: Sequence[ViewBuffers], uvgeo: UVGeometryMaps, rig: CameraRig,
             generated: FrameSequence, index: int = 0, task: Task | str | None = None) -> EvalReport:
    """Score batch element ``index`` of ``generated`` against the asset's ground truth.

    Views are compared with the albedo renders (img2tex) or shaded renders
    (geo2mv) over valid pixels.  The UV frame is compared with the albedo
    atlas over valid texels.  Consistency bakes the generated views onto the
    atlas and measures the mean absolute difference to the generated UV frame
    on texels at least one view covers.
    """
    valid = uvgeo.validity > 0.5
    if not valid.any():
        raise ValueError("asset has no valid UV texels")
    if task is None:
        task = Task.GEO2MV if generated.roles[NUM_VIEWS] is FrameRole.NF else Task.IMG2TEX
    task = Task(task)
    gen_views = [_hwc_unit(generated.frames.mv[index, i]) for i in range(NUM_VIEWS)]
    channel = "albedo" if task is Task.IMG2TEX else "shaded"
    kept = [r is not FrameRole.NF for r in generated.roles[:NUM_VIEWS]]
    per_view = [masked_psnr(g, getattr(v, channel), v.validity) if k else None
                for g, v, k in zip(gen_views, views, kept)]

    baked, coverage = bake_views_to_uv(views, uvgeo, rig, images=gen_views)
    covered = (coverage > 0.5) & valid
    coverage_frac = float(covered.sum() / valid.sum())
    if task is Task.GEO2MV:
        return EvalReport(None, None, coverage_frac, per_view)
    gen_uv = _hwc_unit(generated.frames.uv[index])
    uv_psnr = masked_psnr(gen_uv, asset.albedo_atlas, valid)
    if not any(r is FrameRole.DF for r in generated.roles[:NUM_VIEWS]):
        consistency = None
    elif covered.any():
        consistency = float(np.mean(np.abs(baked[covered].astype(np.float64) - gen_uv[covered])))
    else:
        consistency = 0.0
    return EvalReport(uv_psnr, consistency, coverage_frac, per_view)


def aggregate(reports: Sequence[EvalReport]) -> dict:
    """Mean of every metric over assets; the per-view list is averaged position-wise."""
    if not reports:
        raise ValueError("nothing to aggregate")

    def mean(xs):
        xs = [x for x in xs if x is not None]
        return float(np.mean(xs)) if xs else None

    return {
        "uv_psnr": mean([r.uv_psnr for r in reports]),
        "consistency_mae": mean([r.consistency_mae for r in reports]),
        "coverage_frac": mean([r.coverage_frac for r in reports]),
        "per_view_psnr": [mean(col) for col in zip(*[r.per_view_psnr for r in reports])],
        "n_assets": len(reports),
    }


# ---------------------------------------------------------------- texture application


def apply_texture(asset: TexturedAsset, uv_atlas: np.ndarray) -> TexturedAsset:
    """Replace the albedo atlas; ``uv_atlas`` is (H, W, 3) in [0, 1]."""
    uv_atlas = np.asarray(uv_atlas, dtype=np.float32)
    if uv_atlas.ndim != 3 or uv_atlas.shape[2] != 3:
        raise ValueError(f"atlas must be (H, W, 3), got {uv_atlas.shape}")
    if uv_atlas.shape[:2] != asset.atlas_shape:
        raise ValueError(f"atlas resolution {uv_atlas.shape[:2]} != asset atlas {asset.atlas_shape}")
    return asset.with_atlas(uv_atlas)


def render_previews(asset: TexturedAsset, rig: CameraRig, out_dir, size: int = 128,
                    channel: str = "shaded") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, v in enumerate(rasterize_views(asset, rig, size, size)):
        p = out_dir / f"preview_{i}.png"
        write_png(p, getattr(v, channel))
        paths.append(p)
    return paths


def frames_to_images(seq: FrameSequence, index: int = 0) -> dict[str, np.ndarray]:
    """Kept frames of one batch element as (H, W, 3) arrays in [0, 1]."""
    return {k: np.clip(_hwc_unit(v[index]), 0.0, 1.0) for k, v in output_frames(seq).items()}


def sample_prepared(model, items, cfg: SampleConfig, *, steps_dtype=torch.float32) -> FrameSequence:
    """Sample a batch for prepared assets (see ``muvtex.trainer.data.PreparedAsset``)."""
    geo = Frames(torch.from_numpy(np.stack([a.geo_mv for a in items])),
                 torch.from_numpy(np.stack([a.geo_uv for a in items])))
    labels = torch.from_numpy(np.stack([a.label for a in items]))
    cond = None
    if cfg.task is Task.IMG2TEX:
        cond = torch.from_numpy(np.stack([a.mv_albedo[cfg.cf_view_index] for a in items]))
    was_training = model.training
    model.eval()
    try:
        return euler_sample(model, geo, labels, cond, cfg, dtype=steps_dtype)
    finally:
        model.train(was_training)
