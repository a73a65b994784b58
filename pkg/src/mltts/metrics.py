"""Disentanglement and duration-stability metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractError
from .corpus import Corpus, SyntheticCorpusSpec
from .model import InferenceRequest, MultilingualTTS, infer

EPS = 1e-9


def scatter_ratio(hidden_reps, language_labels) -> float:
    """Between-language over within-language scatter of per-speaker vectors.

    between: count-weighted mean squared distance of language centroids to the
    global centroid; within: mean squared distance of each vector to its
    language centroid.
    """
    x = np.asarray(hidden_reps, dtype=np.float64)
    labels = np.asarray(language_labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ContractError(f"need one label per representation row, got {x.shape} and {labels.shape}")
    langs = np.unique(labels)
    if len(langs) < 2:
        raise ContractError("scatter ratio needs at least two languages")
    g = x.mean(axis=0)
    between = 0.0
    within = 0.0
    for lang in langs:
        members = x[labels == lang]
        c = members.mean(axis=0)
        between += len(members) * float(((c - g) ** 2).sum())
        within += float(((members - c) ** 2).sum())
    n = len(x)
    return (between / n) / (within / n + EPS)


def random_texts(spec: SyntheticCorpusSpec, language: int, count: int, seed: int) -> list[list[int]]:
    rng = np.random.default_rng([seed, language])
    r = spec.phoneme_range(language)
    out = []
    for _ in range(count):
        n = int(rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
        out.append(rng.integers(r.start, r.stop, size=n).tolist())
    return out


def duration_consistency(model: MultilingualTTS, text: Sequence[int], language: int,
                         speaker_ids: Sequence[int], mode: str = "force-crosslingual") -> int:
    """Largest elementwise duration difference across the given speakers."""
    if len(speaker_ids) < 2:
        raise ContractError("duration consistency needs at least two speakers")
    durs = [infer(model, InferenceRequest(tuple(text), language, s, mode))[0] for s in speaker_ids]
    stacked = np.stack(durs)
    return int((stacked.max(axis=0) - stacked.min(axis=0)).max())


def pooled_text_hiddens(model: MultilingualTTS, corpus: Corpus) -> np.ndarray:
    rows = []
    cache: dict = {}
    with ag.no_grad():
        for utt in corpus:
            rows.append(model.encode(utt.phoneme_ids, utt.language_id, cache).data.mean(axis=0))
    return np.stack(rows)


def fit_softmax_probe(x: np.ndarray, y: np.ndarray, num_classes: int, iters: int = 500,
                      lr: float = 0.5, l2: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic regression by full-batch gradient descent."""
    n, d = x.shape
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y]
    for _ in range(iters):
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (x.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return w, b


def speaker_probe_accuracy(model: MultilingualTTS, corpus: Corpus, folds: int = 5) -> float:
    """Cross-validated speaker accuracy of fresh linear probes on frozen, mean-pooled text hiddens.

    Utterance ``i`` lands in fold ``i % folds``; each fold is scored by a probe
    trained on the others (features standardized on the training part), so
    every utterance is tested exactly once.
    """
    if folds < 2:
        raise ContractError(f"probe needs at least 2 folds, got {folds}")
    x = pooled_text_hiddens(model, corpus)
    y = np.array([u.speaker_id for u in corpus])
    fold = np.arange(len(y)) % folds
    correct = 0
    for k in range(folds):
        test = fold == k
        if not test.any():
            continue
        mu = x[~test].mean(axis=0)
        sd = x[~test].std(axis=0) + 1e-8
        xs = (x - mu) / sd
        w, b = fit_softmax_probe(xs[~test], y[~test], corpus.spec.num_speakers)
        correct += int((np.argmax(xs[test] @ w + b, axis=1) == y[test]).sum())
    return correct / len(y)


@dataclass
class MetricsReport:
    scatter_ratio: float
    duration_consistency_max_dev: float
    speaker_probe_accuracy: float
    per_language_duration_means: list[float]
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model: MultilingualTTS, corpus: Corpus, texts_per_language: int = 10, seed: int = 0) -> MetricsReport:
    spec = model.corpus_spec
    reps = model.hidden_speaker_representations()
    ratio = scatter_ratio(reps, model.speaker_languages)

    max_dev = 0
    means = []
    for lang in range(spec.num_languages):
        foreign = [s for s in range(spec.num_speakers) if model.speaker_languages[s] != lang]
        totals = []
        for text in random_texts(spec, lang, texts_per_language, seed):
            if len(foreign) >= 2:
                max_dev = max(max_dev, duration_consistency(model, text, lang, foreign))
            speaker = foreign[0] if foreign else 0
            d, _ = infer(model, InferenceRequest(tuple(text), lang, speaker, "force-crosslingual"))
            totals.append(d.mean())
        means.append(float(np.mean(totals)))

    cfg = model.config
    return MetricsReport(
        scatter_ratio=float(ratio),
        duration_consistency_max_dev=float(max_dev),
        speaker_probe_accuracy=speaker_probe_accuracy(model, corpus),
        per_language_duration_means=means,
        flags={
            "enable_dat": cfg.enable_dat,
            "enable_reg_loss": cfg.enable_reg_loss,
            "share_speaker_projection": cfg.share_speaker_projection,
            "duration_source": cfg.duration_source,
            "seed": cfg.seed,
            "total_steps": cfg.total_steps,
        },
    )
