"""Back-projection of view images onto the UV atlas.

Only used to measure multi-view / UV agreement; generation never goes through
here.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .camera import CameraRig
from .raster import UVGeometryMaps, ViewBuffers

DEPTH_EPS = 1e-2
GRAZING_COS = -0.2


def _bilinear(grid: np.ndarray, col: np.ndarray, row: np.ndarray) -> np.ndarray:
    h, w = grid.shape[:2]
    c0 = np.clip(np.floor(col).astype(np.int64), 0, w - 2)
    r0 = np.clip(np.floor(row).astype(np.int64), 0, h - 2)
    fc = np.clip(col - c0, 0.0, 1.0)
    fr = np.clip(row - r0, 0.0, 1.0)
    top = grid[r0, c0] * (1 - fc) + grid[r0, c0 + 1] * fc
    bot = grid[r0 + 1, c0] * (1 - fc) + grid[r0 + 1, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


def project_texels(uvgeo: UVGeometryMaps, view: ViewBuffers, camera, *, depth_eps: float = DEPTH_EPS,
                   grazing_cos: float = GRAZING_COS):
    """Visibility of every valid texel in one view.

    Returns ``(visible, row, col)`` where ``row``/``col`` index the nearest
    pixel.  A texel is visible when its normal faces the camera
    (n . view_dir < ``grazing_cos``) and its depth agrees with the view depth
    buffer, bilinearly interpolated at the projected location, within
    ``depth_eps``.
    """
    h, w = view.depth.shape
    scr = camera.to_screen(uvgeo.position.astype(np.float64), h, w)
    col, row, z = scr[..., 0], scr[..., 1], scr[..., 2]
    inside = (col >= 0) & (col <= w - 1) & (row >= 0) & (row <= h - 1)
    facing = uvgeo.normal.astype(np.float64) @ camera.forward < grazing_cos
    zbuf = _bilinear(view.depth, col, row)
    visible = (uvgeo.validity > 0) & inside & facing & (np.abs(zbuf - z) < depth_eps)
    ri = np.clip(np.rint(row).astype(np.int64), 0, h - 1)
    ci = np.clip(np.rint(col).astype(np.int64), 0, w - 1)
    visible &= view.validity[ri, ci] > 0
    return visible, ri, ci


def bake_views_to_uv(views: Sequence[ViewBuffers], uvgeo: UVGeometryMaps, rig: CameraRig,
                     images: Sequence[np.ndarray] | None = None, channel: str = "albedo",
                     *, depth_eps: float = DEPTH_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Average the RGB samples of every view that sees each texel.

    ``images`` overrides the colours (e.g. generated frames, (H, W, 3) in
    [0, 1]); otherwise ``channel`` of each ViewBuffers is used.  Views are
    paired with ``rig.cameras`` by position.  Returns ``(baked_atlas,
    coverage)``; texels no view accepts get 0 and coverage 0.
    """
    if images is None:
        images = [getattr(v, channel) for v in views]
    if len(images) != len(views):
        raise ValueError("images and views must have the same length")
    cameras = rig.cameras
    if len(views) != len(cameras):
        raise ValueError(f"expected {len(cameras)} views for the rig, got {len(views)}")
    hu, wu = uvgeo.validity.shape
    acc = np.zeros((hu, wu, 3), dtype=np.float64)
    cnt = np.zeros((hu, wu), dtype=np.float64)
    for view, img, cam in zip(views, images, cameras):
        visible, ri, ci = project_texels(uvgeo, view, cam, depth_eps=depth_eps)
        acc[visible] += np.asarray(img, dtype=np.float64)[ri[visible], ci[visible]]
        cnt[visible] += 1.0
    coverage = cnt > 0
    baked = np.where(coverage[..., None], acc / np.maximum(cnt, 1.0)[..., None], 0.0)
    return baked.astype(np.float32), coverage.astype(np.float32)
