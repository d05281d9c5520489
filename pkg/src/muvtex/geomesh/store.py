"""On-disk formats for assets and cached render buffers.

Asset directory layout::

    mesh.txt      plain-text records: ``kind``, ``v``, ``vn``, ``f`` (vertex
                  indices), ``ft`` (three UV pairs), ``fl`` (three local pairs)
    albedo.png    8-bit RGB atlas
    meta.txt      ``key=value`` lines (label, seed, kind, has_uv)

Grid files (``*.grd``) start with a 16-byte little-endian header
``magic(4s) dtype(u32) H(u16) W(u16) C(u16) reserved(u16)`` followed by the
raw row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .primitives import TexturedAsset

GRID_MAGIC = b"GRD1"
_HEADER = struct.Struct("<4sIHHHH")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<f8"), 4: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class StoreError(ValueError):
    pass


def write_grid(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim == 2:
        grid = grid[..., None]
    dt = grid.dtype.newbyteorder("<") if grid.dtype.byteorder == ">" else grid.dtype
    if np.dtype(dt) not in _CODES:
        raise StoreError(f"unsupported grid dtype {grid.dtype}")
    h, w, c = grid.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GRID_MAGIC, _CODES[np.dtype(dt)], h, w, c, 0))
        fh.write(np.ascontiguousarray(grid, dtype=dt).tobytes())


def read_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise StoreError(f"{path}: truncated header")
    magic, code, h, w, c, _ = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise StoreError(f"{path}: bad magic {magic!r}")
    if code not in _DTYPES:
        raise StoreError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    payload = np.frombuffer(data, dtype=dt, offset=_HEADER.size)
    if payload.size != h * w * c:
        raise StoreError(f"{path}: payload size {payload.size} != {h}x{w}x{c}")
    return payload.reshape(h, w, c).copy()


def write_png(path, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def read_kv(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise StoreError(f"{path}: malformed line {line!r}")
        out[key.strip()] = value.strip()
    return out


def write_kv(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()))


def _fmt(xs) -> str:
    return " ".join(repr(float(x)) for x in xs)


def save_asset(asset: TexturedAsset, directory, *, has_uv: bool = True) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["# muvtex mesh v1", f"kind {asset.kind}"]
    lines += [f"v {_fmt(v)}" for v in asset.vertices]
    lines += [f"vn {_fmt(n)}" for n in asset.normals]
    for f, uv, st in zip(asset.faces, asset.uv_coords, asset.local_coords):
        lines.append("f " + " ".join(str(int(i)) for i in f))
        lines.append(f"ft {_fmt(uv.ravel())}")
        lines.append(f"fl {_fmt(st.ravel())}")
    (d / "mesh.txt").write_text("\n".join(lines) + "\n")
    write_png(d / "albedo.png", asset.albedo_atlas)
    write_kv(d / "meta.txt", {"label": asset.label, "seed": asset.seed, "kind": asset.kind,
                              "has_uv": int(has_uv)})
    return d


def load_asset(directory) -> TexturedAsset:
    d = Path(directory)
    if not (d / "mesh.txt").exists():
        raise StoreError(f"{d}: no mesh.txt")
    verts, norms, faces, uvs, locs = [], [], [], [], []
    kind = None
    for line in (d / "mesh.txt").read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        if tag == "kind":
            kind = rest.strip()
        elif tag == "v":
            verts.append([float(x) for x in rest.split()])
        elif tag == "vn":
            norms.append([float(x) for x in rest.split()])
        elif tag == "f":
            faces.append([int(x) for x in rest.split()])
        elif tag == "ft":
            uvs.append(np.array([float(x) for x in rest.split()]).reshape(3, 2))
        elif tag == "fl":
            locs.append(np.array([float(x) for x in rest.split()]).reshape(3, 2))
        else:
            raise StoreError(f"{d / 'mesh.txt'}: unknown record {tag!r}")
    meta = read_kv(d / "meta.txt")
    return TexturedAsset(
        kind=kind or meta["kind"],
        vertices=np.array(verts, dtype=np.float64),
        normals=np.array(norms, dtype=np.float64),
        faces=np.array(faces, dtype=np.int64),
        uv_coords=np.array(uvs, dtype=np.float64),
        local_coords=np.array(locs, dtype=np.float64),
        albedo_atlas=read_png(d / "albedo.png"),
        label=meta["label"],
        seed=int(meta["seed"]),
    )


def asset_has_uv(directory) -> bool:
    return read_kv(Path(directory) / "meta.txt").get("has_uv", "1") == "1"
