"""Optimizers and piecewise-linear learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


class OptimizerError(RuntimeError):
    pass


class ScheduleError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    kind: str = "adam"  # adam | adamw
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.kind not in ("adam", "adamw"):
            raise OptimizerError(f"unknown optimizer kind {self.kind!r}")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise OptimizerError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise OptimizerError("weight_decay must be >= 0")


class Optimizer:
    """Adam / AdamW over named parameters.

    ``adamw`` applies decoupled weight decay ``w <- w (1 - lr wd)`` before the
    moment update; ``adam`` folds weight decay into the gradient.
    """

    def __init__(self, named_params, config: OptimizerConfig):
        self.config = config
        self.named = [(n, p) for n, p in named_params if p.requires_grad]
        names = [n for n, _ in self.named]
        if len(set(names)) != len(names):
            raise OptimizerError("parameter names must be unique")
        cls = torch.optim.AdamW if config.kind == "adamw" else torch.optim.Adam
        self._opt = cls([p for _, p in self.named], lr=config.lr, betas=config.betas,
                        eps=config.eps, weight_decay=config.weight_decay)

    @property
    def lr(self) -> float:
        return self._opt.param_groups[0]["lr"]

    def set_lr(self, lr: float) -> None:
        for group in self._opt.param_groups:
            group["lr"] = lr

    def zero_grad(self) -> None:
        self._opt.zero_grad(set_to_none=True)

    def step(self) -> None:
        for name, p in self.named:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise OptimizerError(f"non-finite gradient in parameter {name!r}")
        self._opt.step()

    def state_dict(self):
        return self._opt.state_dict()

    def load_state_dict(self, state):
        self._opt.load_state_dict(state)


def optimizer_step(optimizer: Optimizer, lr: float | None = None) -> None:
    if lr is not None:
        optimizer.set_lr(lr)
    optimizer.step()


@dataclass
class LrSchedule:
    kind: str = "linear_tri"  # linear_tri | constant
    warmup_epochs: float = 100
    lr_start: float = 5e-5
    lr_peak: float = 5e-4
    lr_end: float = 5e-7
    total_epochs: float = 400

    def __post_init__(self):
        if self.kind not in ("linear_tri", "constant"):
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ScheduleError("need 0 <= warmup_epochs <= total_epochs")
        if min(self.lr_start, self.lr_peak, self.lr_end) <= 0:
            raise ScheduleError("learning rates must be positive")


# breakpoints used for the TTS models (except the diffusion decoder) and the ASR models
TTS_SCHEDULE = LrSchedule("linear_tri", 100, 5e-5, 5e-4, 5e-7, 400)
DIFFUSION_SCHEDULE = LrSchedule("constant", 0, 1e-4, 1e-4, 1e-4, 400)
ASR_SCHEDULE = LrSchedule("linear_tri", 20, 7e-5, 7e-4, 7e-7, 80)


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    """Learning rate at a (possibly fractional) epoch."""
    if not 0 <= epoch <= schedule.total_epochs or math.isnan(epoch):
        raise ScheduleError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    if schedule.kind == "constant":
        return schedule.lr_peak
    w, total = schedule.warmup_epochs, schedule.total_epochs
    if epoch <= w and w > 0:
        return _lerp(schedule.lr_start, schedule.lr_peak, epoch / w)
    if total == w:
        return schedule.lr_peak
    return _lerp(schedule.lr_peak, schedule.lr_end, (epoch - w) / (total - w))


def _lerp(a: float, b: float, f: float) -> float:
    # exact at both ends: f=0 gives a, f=1 gives b
    return a * (1.0 - f) + b * f


def scaled(schedule: LrSchedule, total_epochs: float) -> LrSchedule:
    """Same breakpoints, compressed or stretched to a new epoch budget."""
    ratio = total_epochs / schedule.total_epochs
    return LrSchedule(schedule.kind, schedule.warmup_epochs * ratio, schedule.lr_start,
                      schedule.lr_peak, schedule.lr_end, total_epochs)
