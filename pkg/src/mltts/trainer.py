"""Training loop (Adam by default, SGD with momentum available) with the adversarial lambda ramp."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .config import TrainingConfig
from .corpus import Corpus, Utterance, make_batches
from .mechanisms import LambdaSchedule, lambda_at
from .model import LossBreakdown, MultilingualTTS, model_forward_train


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, breakdown: LossBreakdown):
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


@dataclass
class SGDMomentum:
    lr: float
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, ag.Tensor]) -> None:
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            p.data -= self.lr * v


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, ag.Tensor]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - self.beta1) * g if m is None else self.beta1 * m + (1 - self.beta1) * g
            v = (1 - self.beta2) * g * g if v is None else self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainingConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, beta1=cfg.momentum)
    return SGDMomentum(cfg.learning_rate, cfg.momentum)


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def batch_for_step(corpus: Sequence[Utterance], batch_size: int, seed: int, step: int) -> list[Utterance]:
    """Batch order is a pure function of (corpus, batch_size, seed, step)."""
    n_batches = math.ceil(len(corpus) / batch_size)
    epoch, idx = divmod(step, n_batches)
    return make_batches(corpus, batch_size, epoch_seed(seed, epoch))[idx]


def train_step(model: MultilingualTTS, optimizer: SGDMomentum | Adam, batch: Sequence[Utterance], step: int,
               schedule: LambdaSchedule) -> LossBreakdown:
    params = model.named_parameters()
    model.grl.lam = lambda_at(schedule, step)
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    with ag.Tape() as tape:
        breakdown, total = model_forward_train(model, batch)
    if not all(math.isfinite(v) for v in breakdown.as_row()):
        raise TrainingDivergedError(step, breakdown)
    ag.backward(tape, total)
    clip = model.config.grad_clip
    if clip > 0:
        norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values()))
        if norm > clip:
            for p in params.values():
                p.grad *= clip / norm
    optimizer.step(params)
    return breakdown


LOG_HEADER = ["step", *LossBreakdown.FIELDS]


def format_log_row(step: int, b: LossBreakdown) -> list[str]:
    return [str(step), *(repr(float(v)) for v in b.as_row())]


class Trainer:
    """Owns the model, optimizer and step counter for one run."""

    def __init__(self, model: MultilingualTTS, corpus: Corpus | Sequence[Utterance], step: int = 0,
                 optimizer: SGDMomentum | Adam | None = None):
        cfg = model.config
        self.model = model
        self.corpus = list(corpus)
        self.step = step
        self.optimizer = optimizer or make_optimizer(cfg)
        self.schedule = LambdaSchedule(max(cfg.total_steps, 1), cfg.lambda_steepness)
        self.history: list[LossBreakdown] = []

    @property
    def config(self) -> TrainingConfig:
        return self.model.config

    def train_one(self) -> LossBreakdown:
        cfg = self.config
        batch = batch_for_step(self.corpus, cfg.batch_size, cfg.seed, self.step)
        b = train_step(self.model, self.optimizer, batch, self.step, self.schedule)
        self.history.append(b)
        self.step += 1
        return b

    def run(self, until: int | None = None, log: io.TextIOBase | None = None,
            on_step: Callable[["Trainer", LossBreakdown], None] | None = None) -> list[LossBreakdown]:
        until = self.config.total_steps if until is None else until
        writer = csv.writer(log, lineterminator="\n") if log is not None else None
        out = []
        while self.step < until:
            step = self.step
            b = self.train_one()
            out.append(b)
            if writer is not None:
                writer.writerow(format_log_row(step, b))
            if on_step is not None:
                on_step(self, b)
        return out


def write_log_header(log: io.TextIOBase) -> None:
    csv.writer(log, lineterminator="\n").writerow(LOG_HEADER)


def train(config: TrainingConfig, corpus: Corpus, log_path: str | Path | None = None) -> Trainer:
    model = MultilingualTTS(config, corpus.spec)
    trainer = Trainer(model, corpus)
    if log_path is None:
        trainer.run()
    else:
        with open(log_path, "w", newline="") as fh:
            write_log_header(fh)
            trainer.run(log=fh)
    return trainer
