"""Monotonic alignment search, duration extraction, length regulation and the
deterministic duration predictor."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from ._accel import njit, resolve_backend
from .autograd import ContractError, Tensor
from .layers import ACTIVATIONS, Conv1d, LayerNorm, Linear, PointwiseConv


class InfeasibleAlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Alignment:
    """Frame -> phoneme assignment plus the score it achieves."""

    assignment: np.ndarray
    num_phonemes: int
    score: float = float("nan")

    @property
    def num_frames(self) -> int:
        return len(self.assignment)

    @property
    def durations(self) -> np.ndarray:
        return durations_from_alignment(self)

    def validate(self) -> None:
        a = self.assignment
        if len(a) == 0 or a[0] != 0 or a[-1] != self.num_phonemes - 1:
            raise ContractError(f"alignment must start at phoneme 0 and end at {self.num_phonemes - 1}")
        steps = np.diff(a)
        if np.any((steps != 0) & (steps != 1)):
            raise ContractError("alignment is not monotone with unit steps")


def alignment_score(scores: np.ndarray, assignment) -> float:
    total = 0.0
    for j, i in enumerate(assignment):
        total += scores[i, j]
    return float(total)


def _check_scores(scores) -> np.ndarray:
    s = np.ascontiguousarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1:
        raise ContractError(f"score matrix must be [phonemes x frames], got shape {s.shape}")
    p, t = s.shape
    if t < p:
        raise InfeasibleAlignmentError(f"cannot align {p} phonemes to {t} frames")
    if not np.all(np.isfinite(s)):
        raise ContractError("score matrix contains non-finite values")
    return s


# -- kernels ------------------------------------------------------------
# Both kernels fill the same cumulative table in the same addition order and
# backtrack with the same rule, so their outputs are bit-identical. On ties the
# backtrack steps down a phoneme, which selects the optimal path that stays
# longest on earlier phonemes.
@njit
def _mas_loop(scores):
    p, t = scores.shape
    neg_inf = -np.inf
    q = np.full((p, t), neg_inf)
    q[0, 0] = scores[0, 0]
    for j in range(1, t):
        lo = max(0, p - (t - j))
        hi = min(p - 1, j)
        for i in range(lo, hi + 1):
            stay = q[i, j - 1]
            adv = q[i - 1, j - 1] if i > 0 else neg_inf
            q[i, j] = scores[i, j] + (stay if stay >= adv else adv)
    path = np.empty(t, np.int64)
    i = p - 1
    for j in range(t - 1, -1, -1):
        path[j] = i
        if j > 0 and i > 0 and (i == j or q[i - 1, j - 1] >= q[i, j - 1]):
            i -= 1
    return path, q[p - 1, t - 1]


def _mas_numpy(scores):
    p, t = scores.shape
    q = np.full((p, t), -np.inf)
    q[0, 0] = scores[0, 0]
    head = np.array([-np.inf])
    for j in range(1, t):
        prev = q[:, j - 1]
        q[:, j] = scores[:, j] + np.maximum(prev, np.concatenate((head, prev[:-1])))
    # only i <= j is reachable; lower-bound states are never on a backtrack path
    path = np.empty(t, np.int64)
    i = p - 1
    for j in range(t - 1, -1, -1):
        path[j] = i
        if j > 0 and i > 0 and (i == j or q[i - 1, j - 1] >= q[i, j - 1]):
            i -= 1
    return path, q[p - 1, t - 1]


_KERNELS = {"numba": _mas_loop, "numpy": _mas_numpy}


def mas_search(scores, backend: str | None = None) -> Alignment:
    """Best monotone surjective alignment of frames (columns) to phonemes (rows)."""
    s = _check_scores(scores)
    path, total = _KERNELS[resolve_backend(backend)](s)
    return Alignment(np.asarray(path, dtype=np.int64), s.shape[0], float(total))


def brute_force_mas(scores) -> Alignment:
    """Exhaustive reference for :func:`mas_search` (P <= 6, T <= 10)."""
    s = _check_scores(scores)
    p, t = s.shape
    if p > 6 or t > 10:
        raise ContractError(f"brute force is limited to 6 x 10 score matrices, got {p} x {t}")
    best = None
    best_score = -np.inf
    # cut points in lexicographic order = durations in lexicographic order; '>='
    # keeps the last tie, i.e. the longest early durations
    for cuts in itertools.combinations(range(1, t), p - 1):
        bounds = (0, *cuts, t)
        a = np.repeat(np.arange(p), np.diff(bounds))
        total = alignment_score(s, a)
        if total >= best_score:
            best, best_score = a, total
    return Alignment(best.astype(np.int64), p, best_score)


def durations_from_alignment(a: Alignment) -> np.ndarray:
    return np.bincount(a.assignment, minlength=a.num_phonemes).astype(np.int64)


def check_durations(d, length: int | None = None) -> np.ndarray:
    d = np.asarray(d)
    if d.ndim != 1 or (length is not None and len(d) != length):
        raise ContractError(f"expected {length} durations, got shape {d.shape}")
    if np.any(d < 1):
        raise ContractError(f"durations must be >= 1, got {d.tolist()}")
    return d.astype(np.int64)


def length_regulate(text_hidden, d) -> Tensor:
    """Repeat row ``i`` of ``text_hidden`` ``d[i]`` times."""
    text_hidden = ag.as_tensor(text_hidden)
    d = check_durations(d, text_hidden.shape[0])
    return ag.take(text_hidden, np.repeat(np.arange(len(d)), d))


# -- duration predictor ---------------------------------------------------
class _Zero:
    def __repr__(self):
        return "ZERO"


ZERO = _Zero()
"""Speaker-conditioning sentinel: substitute a zero vector for the speaker embedding."""


class DurationPredictor:
    """Conv stack over conditioned text hiddens -> one log-duration per phoneme.

    ``speaker_conv`` may be passed in so the predictor shares its speaker
    projection with the regularization loss.
    """

    def __init__(self, hidden_dim: int, embed_dim: int, rng: np.random.Generator,
                 num_layers: int = 2, kernel_size: int = 3, activation: str = "relu",
                 speaker_conv: PointwiseConv | None = None):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.speaker_conv = speaker_conv or PointwiseConv(embed_dim, hidden_dim, rng)
        self.language_conv = PointwiseConv(embed_dim, hidden_dim, rng)
        self.convs = [Conv1d(hidden_dim, hidden_dim, kernel_size, rng) for _ in range(num_layers)]
        self.norms = [LayerNorm(hidden_dim) for _ in range(num_layers)]
        self.out = Linear(hidden_dim, 1, rng)
        self.act = ACTIVATIONS[activation]

    def named_parameters(self, prefix: str, include_speaker_conv: bool = True) -> dict[str, Tensor]:
        out = {}
        if include_speaker_conv:
            out.update(self.speaker_conv.named_parameters(f"{prefix}.speaker_conv"))
        out.update(self.language_conv.named_parameters(f"{prefix}.language_conv"))
        for i, (c, n) in enumerate(zip(self.convs, self.norms)):
            out.update(c.named_parameters(f"{prefix}.conv{i}"))
            out.update(n.named_parameters(f"{prefix}.norm{i}"))
        out.update(self.out.named_parameters(f"{prefix}.out"))
        return out

    def __call__(self, text_hidden, speaker_embedding, language_embedding) -> Tensor:
        return ddp_forward(self, text_hidden, speaker_embedding, language_embedding)


def ddp_forward(predictor: DurationPredictor, text_hidden, speaker_embedding, language_embedding) -> Tensor:
    x = ag.as_tensor(text_hidden)
    if x.ndim != 2 or x.shape[1] != predictor.hidden_dim:
        raise ContractError(f"duration predictor expects [len x {predictor.hidden_dim}], got {x.shape}")
    spk = Tensor(np.zeros(predictor.embed_dim)) if speaker_embedding is ZERO else ag.as_tensor(speaker_embedding)
    lang = ag.as_tensor(language_embedding)
    for what, e in (("speaker", spk), ("language", lang)):
        if e.shape != (predictor.embed_dim,):
            raise ContractError(f"{what} embedding must have width {predictor.embed_dim}, got {e.shape}")
    x = x + predictor.speaker_conv(spk) + predictor.language_conv(lang)
    for conv, norm in zip(predictor.convs, predictor.norms):
        x = norm(predictor.act(conv(x)))
    return ag.reshape(predictor.out(x), (x.shape[0],))


def duration_loss(predicted_log_d, target_d) -> Tensor:
    """MSE between predicted log-durations and log of the target durations."""
    predicted_log_d = ag.as_tensor(predicted_log_d)
    target = check_durations(target_d)
    if predicted_log_d.shape != target.shape:
        raise ContractError(f"predicted {predicted_log_d.shape[0]} durations for {len(target)} phonemes")
    return ag.mse(predicted_log_d, np.log(target.astype(np.float64)))


def discretize_durations(predicted_log_d) -> np.ndarray:
    x = np.asarray(ag.as_tensor(predicted_log_d).data, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("log-durations must be finite")
    return np.maximum(1, np.floor(np.exp(x) + 0.5)).astype(np.int64)
