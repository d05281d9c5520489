"""Procedural textured primitives with hand-built, overlap-free UV atlases."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .raster import cover_uv
from .textures import TextureSpec, evaluate_texture

KINDS = ("cube", "uvsphere", "torus")

CUBE_HALF = 0.7  # yawed corners reach 0.7 * sqrt(2) < 1
SPHERE_RADIUS = 0.95
TORUS_MAJOR, TORUS_MINOR = 0.65, 0.3
SPHERE_RES = (16, 32)  # latitude bands, longitude segments
TORUS_RES = (12, 24)  # minor segments, major segments
UV_INSET = 1e-4


@dataclass
class TexturedAsset:
    """Triangle mesh with per-corner UVs and an RGB albedo atlas.

    ``uv_coords`` and ``local_coords`` are (F, 3, 2).  ``local_coords`` are the
    island-local (s, t) coordinates the procedural texture is evaluated in.
    """

    kind: str
    vertices: np.ndarray  # (V, 3) float64
    normals: np.ndarray  # (V, 3) float64, unit
    faces: np.ndarray  # (F, 3) int64, counter-clockwise seen from outside
    uv_coords: np.ndarray  # (F, 3, 2)
    local_coords: np.ndarray  # (F, 3, 2)
    albedo_atlas: np.ndarray  # (H, W, 3) float32 in [0, 1]
    label: str
    seed: int

    @property
    def atlas_shape(self) -> tuple[int, int]:
        return self.albedo_atlas.shape[0], self.albedo_atlas.shape[1]

    def with_atlas(self, atlas: np.ndarray) -> "TexturedAsset":
        return replace(self, albedo_atlas=np.asarray(atlas, dtype=np.float32))


def _orient(vertices, normals, faces):
    """Flip triangles whose winding disagrees with the mean vertex normal."""
    tri = vertices[faces]
    geo = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = (geo * normals[faces].mean(axis=1)).sum(-1) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces, flip


def _cube(atlas_res: int):
    h = CUBE_HALF
    axes = [
        np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]),
        np.array([0, 1.0, 0]), np.array([0, -1.0, 0]),
        np.array([0, 0, 1.0]), np.array([0, 0, -1.0]),
    ]
    # 3 x 2 island grid aligned to texel boundaries with one-texel gutters
    cw = (atlas_res - 4) // 3
    rh = (atlas_res - 3) // 2
    verts, norms, faces, uvs, locs = [], [], [], [], []
    corners_st = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    for k, n in enumerate(axes):
        b = np.array([0.0, -1.0, 0.0]) if abs(n[1]) < 0.5 else np.array([0.0, 0.0, n[1]])
        a = np.cross(b, n)
        x0 = 1 + (k % 3) * (cw + 1)
        y0 = 1 + (k // 3) * (rh + 1)
        u0, u1 = x0 / atlas_res + UV_INSET, (x0 + cw) / atlas_res - UV_INSET
        v0, v1 = y0 / atlas_res + UV_INSET, (y0 + rh) / atlas_res - UV_INSET
        base = len(verts)
        for s, t in corners_st:
            verts.append(h * (n + (2 * s - 1) * a + (2 * t - 1) * b))
            norms.append(n)
        for tri in ((0, 1, 2), (0, 2, 3)):
            faces.append([base + i for i in tri])
            st = corners_st[list(tri)]
            locs.append(st)
            uvs.append(np.stack([u0 + st[:, 0] * (u1 - u0), v0 + st[:, 1] * (v1 - v0)], axis=-1))
    return (np.array(verts), np.array(norms), np.array(faces, dtype=np.int64),
            np.array(uvs), np.array(locs))


def _grid_surface(rows: int, cols: int, point_fn):
    """Triangulate a (rows+1) x (cols+1) parametric grid with duplicated seams."""
    i, j = np.meshgrid(np.arange(rows + 1), np.arange(cols + 1), indexing="ij")
    s, t = j / cols, i / rows
    pos, nrm = point_fn(s, t)
    verts = pos.reshape(-1, 3)
    norms = nrm.reshape(-1, 3)
    st = np.stack([s, t], axis=-1).reshape(-1, 2)

    def vid(r, c):
        return r * (cols + 1) + c

    faces = []
    for r in range(rows):
        for c in range(cols):
            a, b, cc, d = vid(r, c), vid(r, c + 1), vid(r + 1, c + 1), vid(r + 1, c)
            faces.append([a, b, cc])
            faces.append([a, cc, d])
    faces = np.array(faces, dtype=np.int64)
    faces, _ = _orient(verts, norms, faces)
    locs = st[faces]
    uvs = UV_INSET + locs * (1.0 - 2 * UV_INSET)
    return verts, norms, faces, uvs, locs


def _sphere():
    def fn(s, t):
        theta, phi = np.pi * t, 2 * np.pi * s
        n = np.stack([np.sin(theta) * np.sin(phi), np.cos(theta), np.sin(theta) * np.cos(phi)], axis=-1)
        return SPHERE_RADIUS * n, n

    return _grid_surface(*SPHERE_RES, fn)


def _torus():
    def fn(s, t):
        u, v = 2 * np.pi * s, 2 * np.pi * t
        n = np.stack([np.cos(v) * np.sin(u), np.sin(v), np.cos(v) * np.cos(u)], axis=-1)
        ring = np.stack([np.sin(u), np.zeros_like(u), np.cos(u)], axis=-1)
        return TORUS_MAJOR * ring + TORUS_MINOR * n, n

    return _grid_surface(*TORUS_RES, fn)


def _bake_procedural(spec: TextureSpec, kind: str, uv_coords, local_coords, atlas_res: int, seed: int):
    face_index, bary, _ = cover_uv(uv_coords, atlas_res, atlas_res)
    valid = face_index >= 0
    st = np.einsum("hwk,hwkc->hwc", bary, local_coords[np.where(valid, face_index, 0)])
    st = np.clip(st, 0.0, 1.0 - 1e-9)
    rgb = evaluate_texture(spec, kind, st, seed)
    # 8-bit quantized so the PNG on disk is lossless
    rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0) / 255.0
    return np.where(valid[..., None], rgb, 0.0).astype(np.float32)


def make_primitive(kind: str, texture_spec: str | TextureSpec, seed: int, *,
                   atlas_res: int = 64, randomize_pose: bool = True) -> TexturedAsset:
    """Build a textured cube, UV sphere or torus.

    The seed drives a yaw rotation and a uniform scale in [0.85, 1] (when
    ``randomize_pose``) plus any seed-dependent texture parameters.
    """
    if kind not in KINDS:
        raise ValueError(f"kind: unknown primitive kind {kind!r} (expected one of {', '.join(KINDS)})")
    spec = texture_spec if isinstance(texture_spec, TextureSpec) else TextureSpec.parse(texture_spec)

    if kind == "cube":
        verts, norms, faces, uvs, locs = _cube(atlas_res)
    elif kind == "uvsphere":
        verts, norms, faces, uvs, locs = _sphere()
    else:
        verts, norms, faces, uvs, locs = _torus()

    if randomize_pose:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 104729]))
        yaw = rng.uniform(0.0, 2.0 * np.pi)
        scale = rng.uniform(0.85, 1.0)
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        verts = scale * verts @ rot.T
        norms = norms @ rot.T

    atlas = _bake_procedural(spec, kind, uvs, locs, atlas_res, seed)
    return TexturedAsset(
        kind=kind,
        vertices=verts.astype(np.float64),
        normals=norms.astype(np.float64),
        faces=faces,
        uv_coords=uvs.astype(np.float64),
        local_coords=locs.astype(np.float64),
        albedo_atlas=atlas,
        label=spec.label,
        seed=int(seed),
    )
