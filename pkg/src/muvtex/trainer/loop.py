"""Optimisation loop: schedule, train step, EMA bookkeeping and metric logging."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..muvnet import ModelConfig, MUVNet
from ..seqspace import Task, flow_loss
from .config import TrainConfig
from .data import Batch, DatasetSplit, build_batch, draw_task
from .ema import PowerEMA

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 over ``cfg.warmup`` updates, then cosine decay to 0."""
    if step < cfg.warmup:
        return cfg.lr * step / cfg.warmup
    span = max(cfg.total_steps - cfg.warmup, 1)
    progress = min((step - cfg.warmup) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class StepResult:
    step: int
    loss: float
    task: str
    lr: float
    grad_norm: float = 0.0
    skipped: bool = False
    diagnostics: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        rec = {"step": self.step, "loss": self.loss, "task": self.task, "lr": self.lr,
               "grad_norm": self.grad_norm, "skipped": self.skipped}
        if self.diagnostics:
            rec["diagnostics"] = self.diagnostics
        return rec


class Trainer:
    """Owns model, optimizer, EMA and the single data/noise RNG.

    Everything needed to resume bit-for-bit (weights, Adam moments, EMA, step
    counter, RNG state) is reachable from here and saved by
    :func:`muvtex.trainer.checkpoint.save_checkpoint`.
    """

    def __init__(self, model: MUVNet, split: DatasetSplit, cfg: TrainConfig, *, metrics_path=None):
        self.model = model
        self.split = split
        self.cfg = cfg
        self.model.set_mode(cfg.mode)
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.optimizer = torch.optim.AdamW(
            [p for p in model.parameters() if p.requires_grad],
            lr=lr_at(0, cfg), betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay,
        )
        self.ema = PowerEMA(dict(model.named_parameters()), cfg.ema_std)
        self.metrics_path = Path(metrics_path) if metrics_path else None

    @property
    def model_config(self) -> ModelConfig:
        return self.model.cfg

    def next_batch(self) -> Batch:
        task = draw_task(self.rng, self.cfg.task_mix)
        return build_batch(self.split, task, self.rng, self.cfg.batch_size,
                           flow_shift=self.cfg.flow_shift, uv_only=self.cfg.uv_only)

    def compute_loss(self, batch: Batch) -> torch.Tensor:
        pred = self.model(batch.seq.frames, batch.seq.timesteps, batch.geo, batch.labels)
        return flow_loss(pred, batch.target, batch.roles, batch.t_df)

    def train_step(self, batches: list[Batch] | Batch | None = None) -> StepResult:
        """One optimizer update over ``cfg.accum`` micro-batches.

        A non-finite loss or gradient skips the update (weights, moments and
        EMA stay as they were) and returns ``skipped=True`` with diagnostics.
        """
        if batches is None:
            batches = [self.next_batch() for _ in range(self.cfg.accum)]
        elif isinstance(batches, Batch):
            batches = [batches]
        self.model.train()
        lr = lr_at(self.step, self.cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad(set_to_none=True)
        total = 0.0
        for b in batches:
            loss = self.compute_loss(b) / len(batches)
            if not torch.isfinite(loss):
                self.optimizer.zero_grad(set_to_none=True)
                res = StepResult(self.step, float(loss.detach()), batches[0].task.value, lr, skipped=True,
                                 diagnostics={"reason": "non-finite loss", "names": b.names,
                                              "t_df": b.t_df.tolist()})
                log.warning("step %d skipped: %s", self.step, res.diagnostics)
                self._log(res)
                return res
            loss.backward()
            total += float(loss.detach())
        params = [p for p in self.model.parameters() if p.requires_grad]
        grad_norm = float(torch.nn.utils.clip_grad_norm_(params, self.cfg.grad_clip if self.cfg.grad_clip > 0 else float("inf")))
        if not math.isfinite(grad_norm):
            self.optimizer.zero_grad(set_to_none=True)
            res = StepResult(self.step, total, batches[0].task.value, lr, grad_norm, skipped=True,
                             diagnostics={"reason": "non-finite gradient"})
            log.warning("step %d skipped: %s", self.step, res.diagnostics)
            self._log(res)
            return res
        self.optimizer.step()
        self.step += 1
        self.ema.update(dict(self.model.named_parameters()), self.step)
        res = StepResult(self.step, total, batches[0].task.value, lr, grad_norm)
        if self.step % max(self.cfg.log_every, 1) == 0:
            self._log(res)
        return res

    def _log(self, res: StepResult) -> None:
        if self.metrics_path is None:
            return
        with open(self.metrics_path, "a") as fh:
            fh.write(json.dumps(res.as_record()) + "\n")

    def run(self, steps: int | None = None, callback=None, max_consecutive_skips: int = 10) -> list[StepResult]:
        steps = self.cfg.total_steps - self.step if steps is None else steps
        out, skips = [], 0
        for _ in range(steps):
            res = self.train_step()
            out.append(res)
            skips = skips + 1 if res.skipped else 0
            if skips >= max_consecutive_skips:
                raise NumericalError(f"{skips} consecutive non-finite steps at step {self.step}")
            if callback is not None and callback(self, res):
                break
        return out

    def ema_model(self) -> MUVNet:
        """A copy of the model carrying the EMA weights, in eval mode."""
        m = MUVNet(self.model.cfg)
        m.load_state_dict(self.model.state_dict())
        self.ema.copy_to(m)
        return m.eval()


def task_frequencies(rng: np.random.Generator, cfg: TrainConfig, n: int) -> dict[str, float]:
    counts = {t.value: 0 for t in Task}
    for _ in range(n):
        counts[draw_task(rng, cfg.task_mix).value] += 1
    return {k: v / n for k, v in counts.items()}
