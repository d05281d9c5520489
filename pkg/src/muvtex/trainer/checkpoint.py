"""Checkpoints as a single uncompressed ``.npz``.

Layout (all keys are flat strings):

    meta/json              uint8 bytes of a JSON document (format version,
                           model and train configs, step, numpy RNG state)
    <group>/<param name>   parameter arrays, grouped by mv_base / mv_lora /
                           uv_full / shared
    ema/<param name>       EMA shadow weights
    optim/<param name>/exp_avg, exp_avg_sq, step
                           AdamW moments for trainable parameters
    rng/torch              torch CPU generator state
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..muvnet import GROUPS, ModelConfig, MUVNet
from .config import TrainConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    def __init__(self, diff: dict):
        self.diff = diff
        lines = [f"  {k}: checkpoint={a!r} expected={b!r}" for k, (a, b) in sorted(diff.items())]
        super().__init__("model config mismatch:\n" + "\n".join(lines))


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().contiguous().numpy().copy()


def save_checkpoint(path, model: MUVNet, *, train_cfg: TrainConfig | None = None, step: int = 0,
                    optimizer: torch.optim.Optimizer | None = None, ema=None,
                    rng: np.random.Generator | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for group, params in model.named_groups().items():
        for name, p in params.items():
            arrays[f"{group}/{name}"] = _np(p)
    if ema is not None:
        for name, t in ema.shadow.items():
            arrays[f"ema/{name}"] = _np(t)
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for p, st in optimizer.state.items():
            n = names[id(p)]
            for key in ("exp_avg", "exp_avg_sq", "step"):
                if key in st:
                    arrays[f"optim/{n}/{key}"] = _np(torch.as_tensor(st[key]))
    arrays["rng/torch"] = _np(torch.get_rng_state())
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg is not None else None,
        "step": int(step),
        "numpy_rng": rng.bit_generator.state if rng is not None else None,
        "ema_std": getattr(ema, "std", None),
        "extra": extra or {},
    }
    arrays["meta/json"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


class Checkpoint:
    """Parsed checkpoint contents."""

    def __init__(self, arrays: dict[str, np.ndarray], meta: dict):
        self.arrays = arrays
        self.meta = meta

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.meta["model_config"])

    @property
    def train_config(self) -> TrainConfig | None:
        d = self.meta.get("train_config")
        return TrainConfig.from_dict(d) if d is not None else None

    @property
    def step(self) -> int:
        return int(self.meta["step"])

    def params(self, prefix_groups=GROUPS) -> dict[str, np.ndarray]:
        out = {}
        for key, arr in self.arrays.items():
            group, _, name = key.partition("/")
            if group in prefix_groups:
                out[name] = arr
        return out

    def ema(self) -> dict[str, np.ndarray]:
        return {k[4:]: v for k, v in self.arrays.items() if k.startswith("ema/")}

    def build_model(self, use_ema: bool = False) -> MUVNet:
        model = MUVNet(self.model_config)
        load_into(model, self, use_ema=use_ema)
        return model


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, EOFError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from None
    if "meta/json" not in arrays:
        raise CheckpointError(f"{path}: missing meta/json record")
    meta = json.loads(arrays.pop("meta/json").tobytes().decode())
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {meta.get('format_version')} != {FORMAT_VERSION}")
    return Checkpoint(arrays, meta)


def load_into(model: MUVNet, ckpt: Checkpoint, *, use_ema: bool = False, groups=GROUPS,
              strict: bool = True) -> None:
    """Copy checkpoint weights into ``model`` after checking configs agree."""
    diff = ckpt.model_config.diff(model.cfg)
    if diff:
        raise ConfigMismatchError(diff)
    src = ckpt.ema() if use_ema else ckpt.params(groups)
    wanted = {n: p for g, ps in model.named_groups().items() if g in groups for n, p in ps.items()}
    missing = sorted(set(wanted) - set(src))
    if strict and missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
    with torch.no_grad():
        for name, p in wanted.items():
            if name in src:
                arr = src[name]
                if tuple(arr.shape) != tuple(p.shape):
                    raise CheckpointError(f"{name}: shape {arr.shape} != {tuple(p.shape)}")
                p.copy_(torch.from_numpy(arr))


def restore_trainer(trainer, ckpt: Checkpoint) -> None:
    """Bring a freshly constructed Trainer to the exact state in ``ckpt``."""
    load_into(trainer.model, ckpt)
    names = dict(trainer.model.named_parameters())
    with torch.no_grad():
        for name, arr in ckpt.ema().items():
            trainer.ema.shadow[name].copy_(torch.from_numpy(arr))
    for n, p in names.items():
        if not p.requires_grad or f"optim/{n}/exp_avg" not in ckpt.arrays:
            continue
        st = trainer.optimizer.state[p]
        st["exp_avg"] = torch.from_numpy(ckpt.arrays[f"optim/{n}/exp_avg"].copy())
        st["exp_avg_sq"] = torch.from_numpy(ckpt.arrays[f"optim/{n}/exp_avg_sq"].copy())
        st["step"] = torch.from_numpy(ckpt.arrays[f"optim/{n}/step"].copy())
    trainer.step = ckpt.step
    if ckpt.meta.get("numpy_rng") is not None:
        trainer.rng.bit_generator.state = ckpt.meta["numpy_rng"]
    if "rng/torch" in ckpt.arrays:
        torch.set_rng_state(torch.from_numpy(ckpt.arrays["rng/torch"].copy()))


def save_trainer(path, trainer, extra: dict | None = None) -> Path:
    return save_checkpoint(path, trainer.model, train_cfg=trainer.cfg, step=trainer.step,
                           optimizer=trainer.optimizer, ema=trainer.ema, rng=trainer.rng, extra=extra)
