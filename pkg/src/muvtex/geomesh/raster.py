"""Software rasterization of meshes in view space (orthographic) and UV space.

Everything here is plain numpy and single-threaded.  Triangles are visited in
index order and a strict depth comparison is used, so ties always resolve to the
lowest face index and the output is a pure function of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import FAR_DEPTH, Camera, CameraRig
from .shading import shade_lambertian

INSIDE_EPS = 1e-9
DEGENERATE_AREA = 1e-12


@dataclass
class RasterStats:
    """Diagnostics collected while rasterizing."""

    degenerate_faces: int = 0
    culled_faces: int = 0
    drawn_faces: int = 0


@dataclass
class ViewBuffers:
    position: np.ndarray  # (H, W, 3)
    normal: np.ndarray  # (H, W, 3)
    validity: np.ndarray  # (H, W) float32 in {0, 1}
    albedo: np.ndarray  # (H, W, 3)
    shaded: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W), FAR_DEPTH where empty
    uv: np.ndarray  # (H, W, 2)
    face_index: np.ndarray  # (H, W) int64, -1 where empty
    stats: RasterStats = field(default_factory=RasterStats)

    @property
    def geometry(self) -> np.ndarray:
        """(H, W, 7) position | normal | validity."""
        return np.concatenate([self.position, self.normal, self.validity[..., None]], axis=-1)


@dataclass
class UVGeometryMaps:
    position: np.ndarray  # (H, W, 3)
    normal: np.ndarray  # (H, W, 3)
    validity: np.ndarray  # (H, W) float32
    face_index: np.ndarray  # (H, W) int64, -1 where uncovered
    barycentric: np.ndarray  # (H, W, 3)
    stats: RasterStats = field(default_factory=RasterStats)

    @property
    def geometry(self) -> np.ndarray:
        return np.concatenate([self.position, self.normal, self.validity[..., None]], axis=-1)


def _barycentric(tri: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray | None:
    """Barycentric weights of points (px, py) w.r.t. the 2D triangle ``tri`` (3, 2)."""
    (x0, y0), (x1, y1), (x2, y2) = tri
    denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    if abs(denom) < DEGENERATE_AREA:
        return None
    w0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / denom
    w1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / denom
    return np.stack([w0, w1, 1.0 - w0 - w1], axis=-1)


def _tri_area_3d(tri: np.ndarray) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])))


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 0, v / np.maximum(n, 1e-30), 0.0)


def cover_uv(uv_coords: np.ndarray, height: int, width: int) -> tuple[np.ndarray, np.ndarray, RasterStats]:
    """Find, for every texel centre, the face containing it in UV space.

    ``uv_coords`` is (F, 3, 2) with u along columns and v along rows (origin at
    the top-left texel corner).  Returns ``(face_index, barycentric, stats)``;
    ``face_index`` is -1 for uncovered texels.  When a texel centre lies on an
    edge shared by two faces the lower face index wins.
    """
    face_index = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    stats = RasterStats()
    for fi, tri in enumerate(uv_coords):
        pix = tri * np.array([width, height]) - 0.5  # continuous texel-centre coordinates
        if abs(_signed_area(pix)) < DEGENERATE_AREA:
            stats.degenerate_faces += 1
            continue
        c0 = max(int(np.ceil(pix[:, 0].min() - 1e-6)), 0)
        c1 = min(int(np.floor(pix[:, 0].max() + 1e-6)), width - 1)
        r0 = max(int(np.ceil(pix[:, 1].min() - 1e-6)), 0)
        r1 = min(int(np.floor(pix[:, 1].max() + 1e-6)), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        w = _barycentric(pix, cols.astype(np.float64), rows.astype(np.float64))
        inside = np.all(w >= -INSIDE_EPS, axis=-1) & (face_index[rows, cols] < 0)
        if not inside.any():
            continue
        stats.drawn_faces += 1
        rr, cc = rows[inside], cols[inside]
        face_index[rr, cc] = fi
        bary[rr, cc] = w[inside]
    return face_index, bary, stats


def _signed_area(tri: np.ndarray) -> float:
    (x0, y0), (x1, y1), (x2, y2) = tri
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def rasterize_uv(asset, height: int | None = None, width: int | None = None) -> UVGeometryMaps:
    """World position and normal for every texel covered by a UV triangle.

    Resolution defaults to the asset's atlas resolution.  Uncovered texels hold
    zeros in every channel.
    """
    if height is None or width is None:
        height, width = asset.albedo_atlas.shape[:2]
    face_index, bary, stats = cover_uv(asset.uv_coords, height, width)
    valid = face_index >= 0
    fi = np.where(valid, face_index, 0)
    corners = asset.faces[fi]  # (H, W, 3)
    pos = np.einsum("hwk,hwkc->hwc", bary, asset.vertices[corners])
    nrm = _normalize(np.einsum("hwk,hwkc->hwc", bary, asset.normals[corners]))
    vmask = valid[..., None]
    return UVGeometryMaps(
        position=np.where(vmask, pos, 0.0).astype(np.float32),
        normal=np.where(vmask, nrm, 0.0).astype(np.float32),
        validity=valid.astype(np.float32),
        face_index=face_index,
        barycentric=np.where(vmask, bary, 0.0),
        stats=stats,
    )


def sample_atlas(atlas: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Nearest-texel lookup; ``uv`` (..., 2) with u -> column, v -> row."""
    h, w = atlas.shape[:2]
    col = np.clip(np.floor(uv[..., 0] * w).astype(np.int64), 0, w - 1)
    row = np.clip(np.floor(uv[..., 1] * h).astype(np.int64), 0, h - 1)
    return atlas[row, col]


def rasterize_view(asset, camera: Camera, light_dir: np.ndarray, height: int, width: int) -> ViewBuffers:
    verts_s = camera.to_screen(asset.vertices, height, width)  # (V, 3): col, row, depth
    depth = np.full((height, width), FAR_DEPTH, dtype=np.float64)
    face_index = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    stats = RasterStats()
    fwd = camera.forward
    for fi, face in enumerate(asset.faces):
        tri3 = asset.vertices[face]
        if _tri_area_3d(tri3) < DEGENERATE_AREA:
            stats.degenerate_faces += 1
            continue
        geo_n = np.cross(tri3[1] - tri3[0], tri3[2] - tri3[0])
        if np.dot(geo_n, fwd) >= 0.0:
            stats.culled_faces += 1
            continue
        tri = verts_s[face]
        c0 = max(int(np.ceil(tri[:, 0].min())), 0)
        c1 = min(int(np.floor(tri[:, 0].max())), width - 1)
        r0 = max(int(np.ceil(tri[:, 1].min())), 0)
        r1 = min(int(np.floor(tri[:, 1].max())), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        w = _barycentric(tri[:, :2], cols.astype(np.float64), rows.astype(np.float64))
        if w is None:
            stats.culled_faces += 1
            continue
        z = w @ tri[:, 2]
        inside = np.all(w >= -INSIDE_EPS, axis=-1) & (z < depth[rows, cols])
        if not inside.any():
            continue
        stats.drawn_faces += 1
        rr, cc = rows[inside], cols[inside]
        depth[rr, cc] = z[inside]
        face_index[rr, cc] = fi
        bary[rr, cc] = w[inside]

    valid = face_index >= 0
    fi = np.where(valid, face_index, 0)
    corners = asset.faces[fi]
    pos = np.einsum("hwk,hwkc->hwc", bary, asset.vertices[corners])
    nrm = _normalize(np.einsum("hwk,hwkc->hwc", bary, asset.normals[corners]))
    uv = np.einsum("hwk,hwkc->hwc", bary, asset.uv_coords[fi])
    vmask = valid[..., None]
    pos = np.where(vmask, pos, 0.0).astype(np.float32)
    nrm = np.where(vmask, nrm, 0.0).astype(np.float32)
    uv = np.where(vmask, uv, 0.0).astype(np.float32)
    validity = valid.astype(np.float32)
    albedo = np.where(vmask, sample_atlas(asset.albedo_atlas, uv), 0.0).astype(np.float32)
    shaded = shade_lambertian(albedo, nrm, validity, light_dir)
    return ViewBuffers(
        position=pos,
        normal=nrm,
        validity=validity,
        albedo=albedo,
        shaded=shaded,
        depth=depth,
        uv=uv,
        face_index=face_index,
        stats=stats,
    )


def rasterize_views(asset, rig: CameraRig, height: int = 32, width: int = 32) -> list[ViewBuffers]:
    """Render geometry and appearance buffers for every camera of the rig."""
    return [rasterize_view(asset, cam, rig.light_dir, height, width) for cam in rig.cameras]
