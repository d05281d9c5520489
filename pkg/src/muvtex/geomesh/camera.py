from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAR_DEPTH = 1.0e4
AZIMUTHS_DEG = (0.0, 90.0, 180.0, 270.0)
ELEVATION_DEG = 20.0
# half-width of the orthographic frustum; the [-1, 1]^3 box projects to at most
# 2 * (cos 20 + sin 20) / 2 = 1.28 vertically at these poses
ORTHO_EXTENT = 1.35


@dataclass(frozen=True)
class Camera:
    """Orthographic camera looking at the origin from (azimuth, elevation)."""

    azimuth_deg: float
    elevation_deg: float = ELEVATION_DEG
    extent: float = ORTHO_EXTENT

    @property
    def eye_dir(self) -> np.ndarray:
        a, e = np.radians(self.azimuth_deg), np.radians(self.elevation_deg)
        return np.array([np.cos(e) * np.sin(a), np.sin(e), np.cos(e) * np.cos(a)])

    @property
    def forward(self) -> np.ndarray:
        """Viewing direction (camera -> scene)."""
        return -self.eye_dir

    @property
    def right(self) -> np.ndarray:
        r = np.cross(self.forward, np.array([0.0, 1.0, 0.0]))
        return r / np.linalg.norm(r)

    @property
    def up(self) -> np.ndarray:
        return np.cross(self.right, self.forward)

    def to_screen(self, points: np.ndarray, height: int, width: int) -> np.ndarray:
        """Map world points to continuous (col, row, depth).

        Integer (col, row) values land on pixel centres.  Depth grows away from
        the camera and is measured from the plane through the origin.
        """
        x = points @ self.right / self.extent
        y = points @ self.up / self.extent
        col = (x + 1.0) * 0.5 * width - 0.5
        row = (1.0 - y) * 0.5 * height - 0.5
        depth = points @ self.forward
        return np.stack([col, row, depth], axis=-1)


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]
    light_dir: np.ndarray

    @classmethod
    def from_seed(cls, seed: int = 0) -> "CameraRig":
        """Four fixed views; the seed only picks the key-light direction."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 31337]))
        az = rng.uniform(0.0, 2.0 * np.pi)
        el = rng.uniform(np.radians(30.0), np.radians(70.0))
        light = np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
        return cls(tuple(Camera(a) for a in AZIMUTHS_DEG), light / np.linalg.norm(light))

    def __len__(self) -> int:
        return len(self.cameras)
