from __future__ import annotations

import numpy as np

AMBIENT = 0.3
DIFFUSE = 0.7


def shade_lambertian(albedo: np.ndarray, normal: np.ndarray, validity: np.ndarray, light_dir) -> np.ndarray:
    """albedo * (0.3 + 0.7 * max(0, n . l)) on valid pixels, zero elsewhere."""
    light = np.asarray(light_dir, dtype=np.float64)
    if light.shape != (3,) or abs(np.linalg.norm(light) - 1.0) > 1e-6:
        raise ValueError(f"light_dir must be a unit 3-vector, got {light_dir!r}")
    ndotl = np.maximum(normal @ light, 0.0)
    out = albedo * (AMBIENT + DIFFUSE * ndotl)[..., None]
    return np.where(validity[..., None] > 0, out, 0.0).astype(np.float32)
