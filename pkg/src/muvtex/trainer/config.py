from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    warmup: int = 200
    total_steps: int = 5000
    batch_size: int = 4
    accum: int = 1
    grad_clip: float = 1.0
    ema_std: float = 0.05
    p_img2tex: float = 0.6  # geo2mv gets the rest
    stage: int = 2  # 1: img2tex only, 2: mixed
    mode: str = "scratch"
    flow_shift: float = 1.0
    uv_only: bool = False
    seed: int = 0
    log_every: int = 1
    ckpt_every: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.p_img2tex <= 1.0:
            raise ValueError(f"p_img2tex must be in [0, 1], got {self.p_img2tex}")
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.mode not in ("scratch", "finetune"):
            raise ValueError(f"mode must be scratch or finetune, got {self.mode!r}")

    @property
    def task_mix(self) -> tuple[float, float]:
        """(P[img2tex], P[geo2mv]) after applying the stage rule."""
        if self.stage == 1:
            return 1.0, 0.0
        return self.p_img2tex, 1.0 - self.p_img2tex

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)
