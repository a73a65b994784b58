"""Seeded synthetic multilingual corpus, its JSON-lines file format, and batching.

Each language owns a disjoint block of phoneme ids and each speaker records
only in one native language. Frames are rendered from a hidden process:

* a fixed random template per phoneme,
* a per-speaker additive offset and a per-language channel offset shared by
  every speaker of that language (each language comes from its own
  monolingual recording setup),
* a per-language base duration scaled by a per-phoneme factor and a
  per-speaker tempo, with a small per-utterance jitter,
* per-speaker phoneme preferences, so transcripts differ across speakers,
* optional Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autograd import ContractError

FORMAT_NAME = "mltts-corpus"
FORMAT_VERSION = 1


class CorpusFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CorpusValidationError(ValueError):
    def __init__(self, utterance_id: str, message: str):
        super().__init__(f"utterance {utterance_id}: {message}")
        self.utterance_id = utterance_id


class EmptyCorpusError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_languages: int = 4
    speakers_per_language: int = 4
    phonemes_per_language: int = 12
    utterances_per_speaker: int = 25
    feature_dim: int = 16
    min_phonemes: int = 4
    max_phonemes: int = 10
    template_scale: float = 3.0
    speaker_offset_scale: float = 0.5
    language_channel_scale: float = 1.0
    noise: float = 0.01
    speaker_phoneme_concentration: float = 0.5
    tempo_spread: float = 0.15
    duration_jitter: float = 0.05
    seed: int = 42

    def __post_init__(self):
        for f in ("num_languages", "speakers_per_language", "phonemes_per_language",
                  "utterances_per_speaker", "feature_dim", "min_phonemes"):
            if getattr(self, f) < 1:
                raise ContractError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.max_phonemes < self.min_phonemes:
            raise ContractError("max_phonemes must be >= min_phonemes")

    @property
    def num_speakers(self) -> int:
        return self.num_languages * self.speakers_per_language

    @property
    def num_phonemes(self) -> int:
        return self.num_languages * self.phonemes_per_language

    def phoneme_range(self, language: int) -> range:
        n = self.phonemes_per_language
        return range(language * n, (language + 1) * n)

    def native_language(self, speaker: int) -> int:
        return speaker // self.speakers_per_language

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCorpusSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown corpus spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class Utterance:
    utterance_id: str
    speaker_id: int
    language_id: int
    phoneme_ids: np.ndarray
    durations: np.ndarray
    frames: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.utterance_id == other.utterance_id
            and self.speaker_id == other.speaker_id
            and self.language_id == other.language_id
            and np.array_equal(self.phoneme_ids, other.phoneme_ids)
            and np.array_equal(self.durations, other.durations)
            and np.array_equal(self.frames, other.frames)
        )


@dataclass(eq=False)
class Corpus:
    spec: SyntheticCorpusSpec
    utterances: list[Utterance] = field(default_factory=list)

    @property
    def speaker_languages(self) -> list[int]:
        return [self.spec.native_language(k) for k in range(self.spec.num_speakers)]

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i) -> Utterance:
        return self.utterances[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.spec == other.spec and self.utterances == other.utterances


@dataclass
class HiddenProcess:
    """The generator's latent quantities; recomputable from a SyntheticCorpusSpec alone."""

    templates: np.ndarray          # [num_phonemes x feature_dim]
    speaker_offsets: np.ndarray    # [num_speakers x feature_dim]
    language_channels: np.ndarray  # [num_languages x feature_dim]
    language_base: np.ndarray      # [num_languages] mean frames per phoneme
    phoneme_factor: np.ndarray     # [num_phonemes]
    speaker_tempo: np.ndarray      # [num_speakers]
    speaker_phoneme_probs: np.ndarray  # [num_speakers x phonemes_per_language]

    def render(self, phoneme_ids, durations, speaker: int, language: int, noise: float = 0.0,
               rng: np.random.Generator | None = None) -> np.ndarray:
        frames = np.repeat(self.templates[np.asarray(phoneme_ids)], durations, axis=0)
        frames = frames + (self.speaker_offsets[speaker] + self.language_channels[language])
        if noise > 0:
            frames = frames + noise * rng.standard_normal(frames.shape)
        return frames


def _stream(spec: SyntheticCorpusSpec, name: str) -> np.random.Generator:
    tag = int.from_bytes(name.encode(), "little") % (2**32)
    return np.random.default_rng([spec.seed, tag])


def hidden_process(spec: SyntheticCorpusSpec) -> HiddenProcess:
    nl, ppl = spec.num_languages, spec.phonemes_per_language
    base = 2.0 + 3.0 * np.arange(nl) / max(1, nl - 1)
    probs = _stream(spec, "preferences").dirichlet(
        np.full(ppl, spec.speaker_phoneme_concentration), size=spec.num_speakers
    )
    return HiddenProcess(
        templates=spec.template_scale * _stream(spec, "templates").standard_normal((spec.num_phonemes, spec.feature_dim)),
        speaker_offsets=spec.speaker_offset_scale
        * _stream(spec, "offsets").standard_normal((spec.num_speakers, spec.feature_dim)),
        language_channels=spec.language_channel_scale
        * _stream(spec, "channels").standard_normal((nl, spec.feature_dim)),
        language_base=base,
        phoneme_factor=_stream(spec, "phoneme-duration").uniform(0.6, 1.4, spec.num_phonemes),
        speaker_tempo=1.0 + spec.tempo_spread * _stream(spec, "tempo").uniform(-1.0, 1.0, spec.num_speakers),
        speaker_phoneme_probs=probs,
    )


def generate_corpus(spec: SyntheticCorpusSpec) -> Corpus:
    hp = hidden_process(spec)
    text_rng = _stream(spec, "text")
    jitter_rng = _stream(spec, "jitter")
    noise_rng = _stream(spec, "noise")
    noise = spec.noise * spec.template_scale
    utts = []
    for spk in range(spec.num_speakers):
        lang = spec.native_language(spk)
        first = spec.phoneme_range(lang).start
        for u in range(spec.utterances_per_speaker):
            n = int(text_rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
            ph = first + text_rng.choice(spec.phonemes_per_language, size=n, p=hp.speaker_phoneme_probs[spk])
            mean_d = hp.language_base[lang] * hp.phoneme_factor[ph] * hp.speaker_tempo[spk]
            mean_d = mean_d * np.exp(spec.duration_jitter * jitter_rng.standard_normal(n))
            d = np.maximum(1, np.floor(mean_d + 0.5)).astype(np.int64)
            frames = hp.render(ph, d, spk, lang, noise, noise_rng)
            utts.append(Utterance(f"spk{spk:03d}-utt{u:04d}", spk, lang, ph.astype(np.int64), d, frames))
    return Corpus(spec, utts)


def validate_utterance(utt: Utterance, spec: SyntheticCorpusSpec) -> None:
    uid = utt.utterance_id
    if not 0 <= utt.speaker_id < spec.num_speakers:
        raise CorpusValidationError(uid, f"speaker id {utt.speaker_id} out of range")
    if utt.language_id != spec.native_language(utt.speaker_id):
        raise CorpusValidationError(uid, f"language {utt.language_id} is not speaker {utt.speaker_id}'s language")
    rng_ = spec.phoneme_range(utt.language_id)
    if len(utt.phoneme_ids) == 0 or any(p not in rng_ for p in utt.phoneme_ids.tolist()):
        raise CorpusValidationError(uid, f"phoneme ids outside language range [{rng_.start}, {rng_.stop})")
    if len(utt.durations) != len(utt.phoneme_ids):
        raise CorpusValidationError(uid, "durations and phonemes differ in length")
    if np.any(utt.durations < 1):
        raise CorpusValidationError(uid, "durations must be >= 1")
    if utt.frames.ndim != 2 or utt.frames.shape[1] != spec.feature_dim:
        raise CorpusValidationError(uid, f"frames must be [T x {spec.feature_dim}]")
    if int(utt.durations.sum()) != utt.num_frames:
        raise CorpusValidationError(
            uid, f"sum of durations {int(utt.durations.sum())} != frame count {utt.num_frames}"
        )


# -- file format ------------------------------------------------------------
def _header(corpus: Corpus) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec": asdict(corpus.spec),
        "count": len(corpus),
    }


def _record(utt: Utterance) -> dict:
    return {
        "utterance_id": utt.utterance_id,
        "speaker_id": utt.speaker_id,
        "language_id": utt.language_id,
        "phoneme_ids": utt.phoneme_ids.tolist(),
        "durations": utt.durations.tolist(),
        "num_frames": utt.num_frames,
        "frames": utt.frames.reshape(-1).tolist(),
    }


def dumps_corpus(corpus: Corpus) -> str:
    lines = [json.dumps(_header(corpus), sort_keys=True)]
    lines += [json.dumps(_record(u), sort_keys=True) for u in corpus]
    return "\n".join(lines) + "\n"


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text(dumps_corpus(corpus))


def _parse_record(obj: dict, spec: SyntheticCorpusSpec, lineno: int) -> Utterance:
    try:
        t = int(obj["num_frames"])
        frames = np.asarray(obj["frames"], dtype=np.float64)
        if frames.size != t * spec.feature_dim:
            raise CorpusValidationError(
                str(obj.get("utterance_id")), f"{frames.size} frame values for {t} x {spec.feature_dim} frames"
            )
        return Utterance(
            utterance_id=str(obj["utterance_id"]),
            speaker_id=int(obj["speaker_id"]),
            language_id=int(obj["language_id"]),
            phoneme_ids=np.asarray(obj["phoneme_ids"], dtype=np.int64),
            durations=np.asarray(obj["durations"], dtype=np.int64),
            frames=frames.reshape(t, spec.feature_dim),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CorpusValidationError):
            raise
        raise CorpusFormatError(lineno, f"malformed record: {e}") from None


def loads_corpus(text: str) -> Corpus:
    lines = [ln for ln in text.splitlines()]
    if not any(ln.strip() for ln in lines):
        raise EmptyCorpusError("corpus file is empty")
    spec = None
    utts = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(lineno, f"invalid JSON ({e.msg})") from None
        if not isinstance(obj, dict):
            raise CorpusFormatError(lineno, "record is not an object")
        if spec is None:
            if obj.get("format") != FORMAT_NAME:
                raise CorpusFormatError(lineno, "missing corpus header")
            if obj.get("version") != FORMAT_VERSION:
                raise CorpusFormatError(lineno, f"unsupported corpus version {obj.get('version')}")
            try:
                spec = SyntheticCorpusSpec.from_dict(obj["spec"])
            except (KeyError, TypeError, ValueError) as e:
                raise CorpusFormatError(lineno, f"bad spec: {e}") from None
            continue
        utt = _parse_record(obj, spec, lineno)
        validate_utterance(utt, spec)
        utts.append(utt)
    if not utts:
        raise EmptyCorpusError("corpus has no utterances")
    return Corpus(spec, utts)


def load_corpus(path) -> Corpus:
    return loads_corpus(Path(path).read_text())


# -- batching ----------------------------------------------------------------
def make_batches(utterances: Sequence[Utterance] | Corpus, batch_size: int, epoch_seed: int) -> list[list[Utterance]]:
    """Seeded permutation cut into contiguous chunks; the last chunk may be short."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    items = list(utterances)
    order = np.random.default_rng(epoch_seed).permutation(len(items))
    return [[items[i] for i in order[s:s + batch_size]] for s in range(0, len(items), batch_size)]


def language_of_phonemes(spec: SyntheticCorpusSpec, phoneme_ids: Iterable[int]) -> set[int]:
    return {int(p) // spec.phonemes_per_language for p in phoneme_ids}
