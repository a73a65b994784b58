"""Gradient reversal, the adversarial speaker classifier, the lambda ramp and
the speaker regularization loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Tensor
from .layers import ACTIVATIONS, ConfigurationError, Linear, PointwiseConv


@dataclass
class GradientReversal:
    lam: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError(f"reversal scale must be nonnegative, got {self.lam}")

    def __call__(self, x) -> Tensor:
        return grl_apply(self, x)


def grl_apply(layer: GradientReversal, x) -> Tensor:
    return ag.grad_reverse(x, layer.lam)


class SpeakerClassifier:
    """Fully connected stack mapping pooled text hidden -> speaker logits."""

    def __init__(self, in_dim: int, num_speakers: int, rng: np.random.Generator,
                 hidden: Sequence[int] | None = None, activation: str = "relu"):
        widths = [in_dim, *(hidden if hidden is not None else (in_dim, in_dim)), num_speakers]
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.act = ACTIVATIONS[activation]

    @property
    def num_speakers(self) -> int:
        return self.layers[-1].out_channels

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.act(x)
        return x

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{prefix}.fc{i}"))
        return out


@dataclass(frozen=True)
class LambdaSchedule:
    total_steps: int
    steepness: float = 10.0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigurationError(f"lambda schedule needs total_steps > 0, got {self.total_steps}")

    def at_progress(self, p: float) -> float:
        lam = 2.0 / (1.0 + math.exp(-self.steepness * p)) - 1.0
        return min(max(lam, 0.0), math.nextafter(1.0, 0.0))

    def __call__(self, step: int) -> float:
        return lambda_at(self, step)


def lambda_at(schedule: LambdaSchedule, step: int) -> float:
    """Adversarial scale at ``step``: 2 / (1 + exp(-steepness * p)) - 1 with p = step / total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(f"step {step} outside [0, {schedule.total_steps}]")
    return schedule.at_progress(step / schedule.total_steps)


def speaker_classification_loss(classifier: SpeakerClassifier, text_hidden, true_speaker: int,
                                grl: GradientReversal) -> Tensor:
    text_hidden = ag.as_tensor(text_hidden)
    if text_hidden.ndim != 2 or text_hidden.shape[0] == 0:
        raise ContractError(f"text hidden must be a nonempty [len x hidden] matrix, got {text_hidden.shape}")
    if not 0 <= true_speaker < classifier.num_speakers:
        raise ContractError(f"speaker id {true_speaker} out of range for {classifier.num_speakers} speakers")
    pooled = ag.mean(text_hidden, axis=0)
    return ag.cross_entropy(classifier(grl(pooled)), true_speaker)


class SpeakerProjection(PointwiseConv):
    """Kernel-1 conv from speaker-embedding width to hidden width."""


def speaker_regularization_loss(projection: PointwiseConv, batch_speaker_embeddings) -> Tensor:
    """L2 norm of the batch mean of projected speaker embeddings.

    ``batch_speaker_embeddings`` is either a list of ``[dim]`` tensors or a
    ``[batch x dim]`` tensor.
    """
    if isinstance(batch_speaker_embeddings, Tensor):
        emb = batch_speaker_embeddings
    else:
        if len(batch_speaker_embeddings) == 0:
            raise ContractError("speaker regularization needs a nonempty batch")
        emb = ag.stack(batch_speaker_embeddings)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ContractError(f"speaker regularization needs a nonempty batch, got shape {emb.shape}")
    return ag.l2_norm(ag.mean(projection(emb), axis=0))
