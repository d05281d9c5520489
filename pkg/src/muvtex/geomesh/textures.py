"""Procedural texture descriptors evaluated in island-local surface coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.86, 0.12, 0.12),
    "green": (0.14, 0.70, 0.22),
    "blue": (0.12, 0.25, 0.88),
    "yellow": (0.95, 0.85, 0.15),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "orange": (0.95, 0.52, 0.10),
    "purple": (0.55, 0.18, 0.72),
    "cyan": (0.15, 0.80, 0.85),
    "gray": (0.50, 0.50, 0.50),
}

FAMILIES = ("checker", "stripes", "gradient", "voronoi")

# checks per island side, per primitive kind (columns, rows)
CHECKER_FREQ = {"cube": (8, 8), "uvsphere": (12, 6), "torus": (12, 6)}
# stripe counts and voronoi site counts (inclusive ranges); cube islands are
# small on screen so they get coarser patterns
STRIPE_RANGE = {"cube": (2, 3), "uvsphere": (3, 5), "torus": (2, 4)}
VORONOI_RANGE = {"cube": (3, 5), "uvsphere": (5, 8), "torus": (4, 6)}


class TextureSpecError(ValueError):
    pass


@dataclass(frozen=True)
class TextureSpec:
    family: str
    colors: tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> "TextureSpec":
        parts = [p.strip().lower() for p in text.split(":")]
        family, colors = parts[0], tuple(parts[1:])
        if family not in FAMILIES:
            raise TextureSpecError(
                f"texture_spec: unknown texture family {family!r} (expected one of {', '.join(FAMILIES)})"
            )
        if not 2 <= len(colors) <= 3:
            raise TextureSpecError(f"texture_spec: expected 2 or 3 colors, got {len(colors)} in {text!r}")
        for c in colors:
            if c not in PALETTE:
                raise TextureSpecError(f"texture_spec: unknown color {c!r}")
        return cls(family, colors)

    @property
    def label(self) -> str:
        return ":".join((self.family,) + self.colors)

    def rgb(self) -> np.ndarray:
        return np.array([PALETTE[c] for c in self.colors], dtype=np.float32)


def evaluate_texture(spec: TextureSpec, kind: str, st: np.ndarray, seed: int) -> np.ndarray:
    """Colour for each island-local coordinate.

    ``st`` has shape (..., 2) with values in [0, 1]; returns (..., 3) float32 RGB.
    Seed-dependent parameters (stripe orientation, gradient direction, voronoi
    sites) come from a generator seeded with ``seed`` so the result is
    reproducible.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    cols = spec.rgb()
    s, t = st[..., 0], st[..., 1]
    n = len(cols)

    if spec.family == "checker":
        fu, fv = CHECKER_FREQ[kind]
        idx = (np.floor(s * fu).astype(np.int64) + np.floor(t * fv).astype(np.int64)) % n
        return cols[idx]

    if spec.family == "stripes":
        lo, hi = STRIPE_RANGE[kind]
        count = int(rng.integers(lo, hi + 1))
        angle = float(rng.choice([0.0, 0.5 * np.pi, 0.25 * np.pi, 0.75 * np.pi]))
        c, sn = np.cos(angle), np.sin(angle)
        # normalised so an island spans exactly ``count`` bands at any angle
        coord = ((s - 0.5) * c + (t - 0.5) * sn) / (abs(c) + abs(sn)) + 0.5
        idx = np.minimum(np.floor(coord * count).astype(np.int64), count - 1) % n
        return cols[idx]

    if spec.family == "gradient":
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        d = np.array([np.cos(angle), np.sin(angle)])
        reach = 0.5 * (abs(d[0]) + abs(d[1]))
        x = ((s - 0.5) * d[0] + (t - 0.5) * d[1]) / (2.0 * reach) + 0.5
        x = np.clip(x, 0.0, 1.0) * (n - 1)
        lo = np.minimum(np.floor(x).astype(np.int64), n - 2)
        w = (x - lo)[..., None]
        return ((1.0 - w) * cols[lo] + w * cols[lo + 1]).astype(np.float32)

    # voronoi
    lo, hi = VORONOI_RANGE[kind]
    n_sites = int(rng.integers(lo, hi + 1))
    sites = rng.uniform(0.0, 1.0, size=(n_sites, 2))
    site_col = np.arange(n_sites) % n
    d2 = ((st[..., None, :] - sites) ** 2).sum(-1)
    return cols[site_col[np.argmin(d2, axis=-1)]]
