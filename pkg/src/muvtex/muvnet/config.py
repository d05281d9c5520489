from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..geomesh.textures import FAMILIES, PALETTE


@dataclass(frozen=True)
class ModelConfig:
    patch: int = 4
    dim: int = 192
    heads: int = 4
    depth: int = 6
    mlp_ratio: float = 4.0
    lora_rank: int = 8
    lora_alpha: float = 16.0
    mv_size: int = 32
    uv_size: int = 64
    channels: int = 3
    geo_channels: int = 7  # position(3) | normal(3) | validity(1)
    rope_base: float = 10000.0
    rope_max_len: int = 1024
    n_families: int = len(FAMILIES)
    n_colors: int = len(PALETTE)
    # ablation switches
    use_geo: bool = True
    decoupled: bool = True

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} not divisible by heads={self.heads}")
        if self.head_dim % 6:
            raise ValueError(f"head_dim={self.head_dim} must be divisible by 6 for 3-axis rotary embedding")
        for name, size in (("mv_size", self.mv_size), ("uv_size", self.uv_size)):
            if size % self.patch:
                raise ValueError(f"{name}={size} not divisible by patch={self.patch}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def mv_grid(self) -> int:
        return self.mv_size // self.patch

    @property
    def uv_grid(self) -> int:
        return self.uv_size // self.patch

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)

    def diff(self, other: "ModelConfig") -> dict[str, tuple]:
        a, b = self.to_dict(), other.to_dict()
        return {k: (a[k], b[k]) for k in a if a[k] != b[k]}
