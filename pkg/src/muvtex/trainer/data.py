"""Turning assets into training tensors and assembling noised batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..geomesh import CameraRig, TexturedAsset, UVGeometryMaps, ViewBuffers, rasterize_uv, rasterize_views
from ..geomesh.textures import FAMILIES, PALETTE, TextureSpec
from ..seqspace import (NUM_VIEWS, FrameRole, Frames, FrameSequence, Task, TaskSpec, frame_roles,
                        noise_sequence, shift_time, uv_only_roles, velocity_target)

_COLOR_INDEX = {c: i for i, c in enumerate(PALETTE)}


def label_tokens(label: str) -> np.ndarray:
    """``family:c1:c2[:c3]`` -> int64 (4,) [family, c1, c2, c3-or-none]."""
    spec = TextureSpec.parse(label)
    cols = [_COLOR_INDEX[c] for c in spec.colors] + [len(PALETTE)] * (3 - len(spec.colors))
    return np.array([FAMILIES.index(spec.family)] + cols, dtype=np.int64)


def to_signed(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float32) * 2.0 - 1.0


def to_unit(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return (np.asarray(x, dtype=np.float32) + 1.0) * 0.5


def chw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


@dataclass
class PreparedAsset:
    """An asset with its renders, as the channel-first arrays the model eats.

    Colour arrays are in [-1, 1]; geometry is position | normal | validity.
    """

    name: str
    asset: TexturedAsset
    views: list[ViewBuffers]
    uvgeo: UVGeometryMaps
    mv_albedo: np.ndarray  # (4, 3, H, W)
    mv_shaded: np.ndarray  # (4, 3, H, W)
    uv_albedo: np.ndarray  # (3, Hu, Wu)
    geo_mv: np.ndarray  # (4, 7, H, W)
    geo_uv: np.ndarray  # (7, Hu, Wu)
    label: np.ndarray  # (4,)
    has_uv: bool = True

    @classmethod
    def build(cls, asset: TexturedAsset, rig: CameraRig, mv_size: int = 32, name: str = "",
              has_uv: bool = True, views: list[ViewBuffers] | None = None,
              uvgeo: UVGeometryMaps | None = None) -> "PreparedAsset":
        views = views if views is not None else rasterize_views(asset, rig, mv_size, mv_size)
        uvgeo = uvgeo if uvgeo is not None else rasterize_uv(asset)
        return cls(
            name=name or f"{asset.kind}-{asset.label}-{asset.seed}",
            asset=asset,
            views=views,
            uvgeo=uvgeo,
            mv_albedo=np.stack([chw(to_signed(v.albedo)) for v in views]),
            mv_shaded=np.stack([chw(to_signed(v.shaded)) for v in views]),
            uv_albedo=chw(to_signed(asset.albedo_atlas)),
            geo_mv=np.stack([chw(v.geometry.astype(np.float32)) for v in views]),
            geo_uv=chw(uvgeo.geometry.astype(np.float32)),
            label=label_tokens(asset.label),
            has_uv=has_uv,
        )


@dataclass
class DatasetSplit:
    tex_assets: list[PreparedAsset] = field(default_factory=list)
    mv_assets: list[PreparedAsset] = field(default_factory=list)
    eval_assets: list[PreparedAsset] = field(default_factory=list)

    def __post_init__(self):
        train = {id(a) for a in self.tex_assets} | {id(a) for a in self.mv_assets}
        names = {a.name for a in self.tex_assets} | {a.name for a in self.mv_assets}
        for a in self.eval_assets:
            if id(a) in train or a.name in names:
                raise ValueError(f"eval asset {a.name!r} also appears in a training pool")

    def pool(self, task: Task) -> list[PreparedAsset]:
        return self.tex_assets if Task(task) is Task.IMG2TEX else self.mv_assets


@dataclass
class Batch:
    task: Task
    roles: tuple[FrameRole, ...]
    cf_view_index: int
    seq: FrameSequence
    clean: Frames
    noise: Frames
    target: Frames
    t_df: torch.Tensor  # (B,)
    geo: Frames
    labels: torch.Tensor  # (B, 4)
    names: list[str]


def draw_task(rng: np.random.Generator, task_mix: tuple[float, float]) -> Task:
    return Task.IMG2TEX if rng.random() < task_mix[0] else Task.GEO2MV


def stack_geo(items: list[PreparedAsset]) -> Frames:
    return Frames(torch.from_numpy(np.stack([a.geo_mv for a in items])),
                  torch.from_numpy(np.stack([a.geo_uv for a in items])))


def build_batch(split: DatasetSplit, task: Task | str, rng: np.random.Generator, batch_size: int = 4,
                *, flow_shift: float = 1.0, uv_only: bool = False) -> Batch:
    """Sample assets, roles, a DF time and Gaussian noise, and noise the sequence.

    img2tex uses albedo views and the albedo atlas as clean frames; geo2mv uses
    shaded views and leaves the UV slot empty (it is pure noise there).  All
    randomness comes from ``rng``.
    """
    task = Task(task)
    pool = split.pool(task)
    if not pool:
        raise ValueError(f"no assets available for task {task.value}")
    idx = rng.integers(len(pool), size=batch_size)
    items = [pool[i] for i in idx]
    cf = int(rng.integers(NUM_VIEWS)) if task is Task.IMG2TEX else 0
    roles = frame_roles(TaskSpec(task, cf))
    if uv_only and task is Task.IMG2TEX:
        roles = uv_only_roles(roles)

    if task is Task.IMG2TEX:
        mv = np.stack([a.mv_albedo for a in items])
        uv = np.stack([a.uv_albedo for a in items])
    else:
        mv = np.stack([a.mv_shaded for a in items])
        uv = np.zeros((batch_size,) + items[0].uv_albedo.shape, dtype=np.float32)
    clean = Frames(torch.from_numpy(mv), torch.from_numpy(uv))

    t_df = torch.from_numpy(rng.uniform(0.0, 1.0, size=batch_size).astype(np.float32))
    t_df = shift_time(t_df, flow_shift)
    noise = Frames(torch.from_numpy(rng.standard_normal(mv.shape, dtype=np.float32)),
                   torch.from_numpy(rng.standard_normal(uv.shape, dtype=np.float32)))
    seq = noise_sequence(clean, roles, t_df, noise)
    return Batch(
        task=task,
        roles=roles,
        cf_view_index=cf,
        seq=seq,
        clean=clean,
        noise=noise,
        target=velocity_target(clean, noise),
        t_df=t_df,
        geo=stack_geo(items),
        labels=torch.from_numpy(np.stack([a.label for a in items])),
        names=[a.name for a in items],
    )
