from .checkpoint import (CheckpointError, ConfigMismatchError, load_into, read_checkpoint, restore_trainer,
                         save_checkpoint, save_trainer)
from .config import TrainConfig
from .data import Batch, DatasetSplit, PreparedAsset, build_batch, draw_task, label_tokens
from .ema import PowerEMA, ema_beta, ema_update, std_to_exp
from .loop import NumericalError, StepResult, Trainer, lr_at, task_frequencies

__all__ = [
    "Batch", "CheckpointError", "ConfigMismatchError", "DatasetSplit", "NumericalError", "PowerEMA",
    "PreparedAsset", "StepResult", "TrainConfig", "Trainer", "build_batch", "draw_task", "ema_beta",
    "ema_update", "label_tokens", "load_into", "lr_at", "read_checkpoint", "restore_trainer",
    "save_checkpoint", "save_trainer", "std_to_exp", "task_frequencies",
]
