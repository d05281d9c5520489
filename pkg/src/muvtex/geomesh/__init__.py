from .bake import bake_views_to_uv
from .camera import Camera, CameraRig
from .primitives import KINDS, TexturedAsset, make_primitive
from .raster import RasterStats, UVGeometryMaps, ViewBuffers, rasterize_uv, rasterize_views
from .shading import shade_lambertian
from .textures import FAMILIES, PALETTE, TextureSpec, TextureSpecError

__all__ = [
    "Camera", "CameraRig", "FAMILIES", "KINDS", "PALETTE", "RasterStats", "TextureSpec",
    "TextureSpecError", "TexturedAsset", "UVGeometryMaps", "ViewBuffers", "bake_views_to_uv",
    "make_primitive", "rasterize_uv", "rasterize_views", "shade_lambertian",
]
