"""On-disk toy datasets: generation, manifest, cached render buffers, loading."""

from __future__ import annotations

import json
import math
import shutil
from pathlib import Path

import numpy as np

from .geomesh import (CameraRig, FAMILIES, KINDS, PALETTE, RasterStats, UVGeometryMaps, ViewBuffers, make_primitive,
                      rasterize_uv, rasterize_views)
from .geomesh.store import StoreError, asset_has_uv, load_asset, read_grid, save_asset, write_grid, write_png
from .trainer import DatasetSplit, PreparedAsset

MANIFEST = "manifest.json"
SPLITS = ("train-tex", "train-mv", "eval")

_VIEW_FIELDS = ("position", "normal", "validity", "albedo", "shaded", "depth", "uv", "face_index")
_UV_FIELDS = ("position", "normal", "validity", "face_index", "barycentric")


class DataError(RuntimeError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_sizes(count: int, ratios=(0.6, 0.25, 0.15)) -> tuple[int, int, int]:
    """Round-half-up the first two shares; eval takes whatever is left."""
    n_tex = min(count, round_half_up(count * ratios[0]))
    n_mv = min(count - n_tex, round_half_up(count * ratios[1]))
    return n_tex, n_mv, count - n_tex - n_mv


def random_label(rng: np.random.Generator, textures) -> str:
    family = textures[int(rng.integers(len(textures)))]
    colors = list(PALETTE)
    n = 3 if rng.random() < 0.3 else 2
    picks = rng.choice(len(colors), size=n, replace=False)
    return ":".join([family] + [colors[int(i)] for i in picks])


def _grid(x: np.ndarray) -> np.ndarray:
    return x[..., None] if x.ndim == 2 else x


def save_buffers(directory, views: list[ViewBuffers], uvgeo: UVGeometryMaps) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, v in enumerate(views):
        for name in _VIEW_FIELDS:
            write_grid(d / f"view_{i}_{name}.grd", _grid(np.asarray(getattr(v, name))))
    for name in _UV_FIELDS:
        write_grid(d / f"uv_{name}.grd", _grid(np.asarray(getattr(uvgeo, name))))


def load_buffers(directory, n_views: int = 4) -> tuple[list[ViewBuffers], UVGeometryMaps]:
    d = Path(directory)

    def get(name, squeeze=False):
        g = read_grid(d / f"{name}.grd")
        return g[..., 0] if squeeze else g

    views = []
    for i in range(n_views):
        kw = {n: get(f"view_{i}_{n}", n in ("validity", "depth", "face_index")) for n in _VIEW_FIELDS}
        views.append(ViewBuffers(**kw, stats=RasterStats()))
    kw = {n: get(f"uv_{n}", n in ("validity", "face_index")) for n in _UV_FIELDS}
    return views, UVGeometryMaps(**kw, stats=RasterStats())


def generate_dataset(out, *, count: int = 16, seed: int = 0, kinds=KINDS, textures=FAMILIES,
                     ratios=(0.6, 0.25, 0.15), mv_size: int = 32, atlas_res: int = 64, force: bool = False) -> dict:
    """Write ``count`` assets, their cached renders and a manifest under ``out``."""
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise DataError(f"{out} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    rig = CameraRig.from_seed(seed)
    n_tex, n_mv, n_eval = split_sizes(count, ratios)
    names = [f"asset_{i:04d}" for i in range(count)]
    splits = {"train-tex": names[:n_tex], "train-mv": names[n_tex:n_tex + n_mv], "eval": names[n_tex + n_mv:]}
    for i, name in enumerate(names):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        kind = kinds[int(rng.integers(len(kinds)))]
        label = random_label(rng, textures)
        asset = make_primitive(kind, label, seed=int(rng.integers(2 ** 31)), atlas_res=atlas_res)
        d = out / name
        save_asset(asset, d, has_uv=name not in splits["train-mv"])
        views = rasterize_views(asset, rig, mv_size, mv_size)
        uvgeo = rasterize_uv(asset)
        save_buffers(d / "cache", views, uvgeo)
        for k, v in enumerate(views):
            write_png(d / f"view_{k}.png", v.shaded)
    manifest = {
        "format": 1,
        "count": count,
        "seed": seed,
        "kinds": list(kinds),
        "textures": list(textures),
        "ratios": list(ratios),
        "mv_size": mv_size,
        "atlas_res": atlas_res,
        "splits": splits,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(data_dir) -> dict:
    p = Path(data_dir) / MANIFEST
    if not p.is_file():
        raise DataError(f"dataset manifest not found: {p}")
    try:
        manifest = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid manifest ({exc})") from None
    if set(manifest.get("splits", {})) != set(SPLITS):
        raise DataError(f"{p}: manifest must list splits {SPLITS}")
    return manifest


def rig_for(manifest: dict) -> CameraRig:
    return CameraRig.from_seed(int(manifest["seed"]))


def load_prepared(asset_dir, rig: CameraRig, mv_size: int = 32) -> PreparedAsset:
    d = Path(asset_dir)
    try:
        asset = load_asset(d)
    except (OSError, KeyError) as exc:
        raise DataError(f"{d}: cannot load asset ({exc})") from None
    except StoreError as exc:
        raise DataError(str(exc)) from None
    views = uvgeo = None
    if (d / "cache").is_dir():
        try:
            views, uvgeo = load_buffers(d / "cache")
        except (OSError, StoreError):
            views = uvgeo = None
        if views is not None and views[0].validity.shape != (mv_size, mv_size):
            views = uvgeo = None
    return PreparedAsset.build(asset, rig, mv_size, name=d.name, has_uv=asset_has_uv(d), views=views, uvgeo=uvgeo)


def load_split(data_dir, pools: str = "hybrid", which=SPLITS) -> DatasetSplit:
    """Load manifest splits into a :class:`DatasetSplit`.

    ``pools="hybrid"``: train-tex feeds img2tex and train-mv feeds geo2mv.
    ``pools="split"``: train-tex is divided 3:2 between the two tasks.
    """
    manifest = read_manifest(data_dir)
    rig = rig_for(manifest)
    mv_size = int(manifest.get("mv_size", 32))
    root = Path(data_dir)

    def load(split):
        if split not in which:
            return []
        return [load_prepared(root / n, rig, mv_size) for n in manifest["splits"][split]]

    tex, mv, ev = load("train-tex"), load("train-mv"), load("eval")
    if pools == "split":
        cut = round_half_up(len(tex) * 0.6)
        tex, mv = tex[:cut], tex[cut:]
    elif pools != "hybrid":
        raise ValueError(f"unknown pools mode {pools!r}")
    return DatasetSplit(tex_assets=tex, mv_assets=mv, eval_assets=ev)
