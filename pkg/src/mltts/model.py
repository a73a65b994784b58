"""Model assembly: text encoder, duration predictor, frame decoder, and the
adversarial / regularization heads wired into one trainable registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .alignment import (
    ZERO,
    DurationPredictor,
    check_durations,
    discretize_durations,
    duration_loss,
    length_regulate,
    mas_search,
)
from .autograd import ContractError, Tensor
from .config import TrainingConfig
from .corpus import SyntheticCorpusSpec, Utterance
from .layers import (
    ACTIVATIONS,
    ConfigurationError,
    Conv1d,
    EmbeddingTable,
    PointwiseConv,
    TextEncoder,
    TextEncoderSpec,
    generate_encoder_params,
    text_encoder_forward,
)
from .mechanisms import (
    GradientReversal,
    SpeakerClassifier,
    SpeakerProjection,
    speaker_classification_loss,
    speaker_regularization_loss,
)


class FrameDecoder:
    """Conv stack from length-regulated hiddens (+ speaker/language injection) to frames."""

    def __init__(self, hidden_dim: int, embed_dim: int, feature_dim: int, rng: np.random.Generator,
                 kernel_size: int = 3, activation: str = "relu"):
        self.speaker_conv = PointwiseConv(embed_dim, hidden_dim, rng)
        self.language_conv = PointwiseConv(embed_dim, hidden_dim, rng)
        self.conv0 = Conv1d(hidden_dim, hidden_dim, kernel_size, rng)
        self.conv1 = Conv1d(hidden_dim, feature_dim, kernel_size, rng)
        self.act = ACTIVATIONS[activation]

    def __call__(self, x: Tensor, speaker_embedding, language_embedding) -> Tensor:
        x = x + self.speaker_conv(speaker_embedding) + self.language_conv(language_embedding)
        return self.conv1(self.act(self.conv0(x)))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("speaker_conv", "language_conv", "conv0", "conv1"):
            out.update(getattr(self, name).named_parameters(f"{prefix}.{name}"))
        return out


@dataclass
class LossBreakdown:
    reconstruction: float
    duration: float
    speaker_cls: float
    speaker_reg: float
    total: float
    lam: float

    FIELDS = ("reconstruction", "duration", "speaker_cls", "speaker_reg", "total", "lam")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


class MultilingualTTS:
    """All trainable parts plus corpus metadata (speaker -> native language)."""

    def __init__(self, config: TrainingConfig, corpus_spec: SyntheticCorpusSpec):
        self.config = config
        self.corpus_spec = corpus_spec
        rng = np.random.default_rng(config.seed)
        e, h = config.dim("embed_dim"), config.dim("hidden_dim")
        self.encoder_spec = TextEncoderSpec(
            num_blocks=config.dim("num_blocks"), hidden_dim=h, num_heads=config.dim("num_heads"),
            ffn_dim=config.dim("ffn_dim"), window=config.dim("window"), activation=config.activation,
        )
        self.speakers = EmbeddingTable(corpus_spec.num_speakers, e, rng)
        self.languages = EmbeddingTable(corpus_spec.num_languages, e, rng)
        self.encoder = TextEncoder(self.encoder_spec, corpus_spec.num_phonemes, e, rng)
        self.speaker_projection = SpeakerProjection(e, h, rng)
        self.duration_predictor = DurationPredictor(
            h, e, rng, num_layers=config.ddp_layers, kernel_size=config.ddp_kernel, activation=config.activation,
            speaker_conv=self.speaker_projection if config.share_speaker_projection else None,
        )
        self.classifier = SpeakerClassifier(h, corpus_spec.num_speakers, rng,
                                            hidden=[h] * config.classifier_layers, activation=config.activation)
        self.grl = GradientReversal(0.0)
        self.decoder = FrameDecoder(h, e, corpus_spec.feature_dim, rng,
                                    kernel_size=config.decoder_kernel, activation=config.activation)
        self.frame_encoder = PointwiseConv(corpus_spec.feature_dim, h, rng)
        self.speaker_languages = np.array(
            [corpus_spec.native_language(k) for k in range(corpus_spec.num_speakers)], dtype=np.int64
        )

    @property
    def hidden_dim(self) -> int:
        return self.encoder_spec.hidden_dim

    def named_parameters(self) -> dict[str, Tensor]:
        reg: dict[str, Tensor] = {}

        def put(items: dict[str, Tensor]):
            for k, v in items.items():
                if k in reg:
                    raise ContractError(f"duplicate parameter name {k}")
                reg[k] = v

        put(self.speakers.named_parameters("speakers"))
        put(self.languages.named_parameters("languages"))
        put(self.encoder.named_parameters("encoder"))
        put(self.speaker_projection.named_parameters("speaker_projection"))
        put(self.duration_predictor.named_parameters(
            "duration_predictor", include_speaker_conv=not self.config.share_speaker_projection))
        put(self.classifier.named_parameters("classifier"))
        put(self.decoder.named_parameters("decoder"))
        put(self.frame_encoder.named_parameters("frame_encoder"))
        return reg

    # -- embeddings -------------------------------------------------------
    def speaker_embedding(self, speaker: int) -> Tensor:
        return self.speakers(speaker)

    def language_embedding(self, language: int) -> Tensor:
        return self.languages(language)

    def encode(self, phoneme_ids, language: int, cache: dict | None = None) -> Tensor:
        lang = self.language_embedding(language)
        if cache is not None and language in cache:
            gen = cache[language]
        else:
            gen = generate_encoder_params(self.encoder.generator, lang)
            if cache is not None:
                cache[language] = gen
        return text_encoder_forward(self.encoder, gen, phoneme_ids, lang)

    def hidden_speaker_representations(self) -> np.ndarray:
        """Projected speaker embeddings, one row per speaker."""
        with ag.no_grad():
            return self.speaker_projection(self.speakers.weights).data.copy()


def _frame_scores(model: MultilingualTTS, text_hidden: Tensor, frames: np.ndarray) -> tuple[np.ndarray, Tensor]:
    f = model.frame_encoder(Tensor(frames))
    h = text_hidden.data
    scores = -((h[:, None, :] - f.data[None, :, :]) ** 2).sum(axis=-1)
    return scores, f


def model_forward_train(model: MultilingualTTS, batch: Sequence[Utterance]) -> tuple[LossBreakdown, Tensor]:
    """Composite loss over one batch; call inside a :class:`Tape` to train."""
    if len(batch) == 0:
        raise ContractError("empty batch")
    cfg = model.config
    fdim = model.corpus_spec.feature_dim
    cache: dict = {}
    recon_terms, dur_terms, cls_terms = [], [], []
    for utt in batch:
        if utt.frames.shape[1] != fdim:
            raise ConfigurationError(f"utterance {utt.utterance_id} has {utt.frames.shape[1]} features, model expects {fdim}")
        spk = model.speaker_embedding(utt.speaker_id)
        lang = model.language_embedding(utt.language_id)
        h = model.encode(utt.phoneme_ids, utt.language_id, cache)
        recon = None
        if cfg.duration_source == "mas":
            scores, f = _frame_scores(model, h, utt.frames)
            d = mas_search(scores).durations
            recon = ag.mse(length_regulate(h, d), f)
        else:
            d = check_durations(utt.durations, len(utt.phoneme_ids))
        ddp_in = h.detach() if cfg.detach_duration_input else h
        dur_terms.append(duration_loss(model.duration_predictor(ddp_in, spk, lang), d))
        frames_hat = model.decoder(length_regulate(h, d), spk, lang)
        rec = ag.mse(frames_hat, Tensor(utt.frames))
        recon_terms.append(rec if recon is None else rec + recon)
        if cfg.enable_dat:
            cls_terms.append(speaker_classification_loss(model.classifier, h, utt.speaker_id, model.grl))

    zero = Tensor(0.0)
    reconstruction = ag.mean(ag.stack(recon_terms))
    duration = ag.mean(ag.stack(dur_terms))
    speaker_cls = ag.mean(ag.stack(cls_terms)) if cls_terms else zero
    if cfg.enable_reg_loss:
        spk_batch = ag.take(model.speakers.weights, [u.speaker_id for u in batch])
        speaker_reg = speaker_regularization_loss(model.speaker_projection, spk_batch)
    else:
        speaker_reg = zero
    total = reconstruction + cfg.w_dur * duration + speaker_cls + cfg.w_reg * speaker_reg
    breakdown = LossBreakdown(
        reconstruction=reconstruction.item(),
        duration=duration.item(),
        speaker_cls=speaker_cls.item(),
        speaker_reg=speaker_reg.item(),
        total=total.item(),
        lam=model.grl.lam,
    )
    return breakdown, total


# -- inference ---------------------------------------------------------------
MODES = ("auto", "force-intralingual", "force-crosslingual")


@dataclass(frozen=True)
class InferenceRequest:
    phoneme_ids: tuple[int, ...]
    target_language: int
    speaker: int
    mode: str = "auto"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown inference mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "phoneme_ids", tuple(int(p) for p in self.phoneme_ids))


def resolve_intralingual(model: MultilingualTTS, request: InferenceRequest) -> bool:
    if request.mode == "force-intralingual":
        return True
    if request.mode == "force-crosslingual":
        return False
    return request.target_language == int(model.speaker_languages[request.speaker])


def _check_request(model: MultilingualTTS, r: InferenceRequest) -> None:
    cs = model.corpus_spec
    if not 0 <= r.speaker < cs.num_speakers:
        raise ContractError(f"speaker id {r.speaker} out of range for {cs.num_speakers} speakers")
    if not 0 <= r.target_language < cs.num_languages:
        raise ContractError(f"language id {r.target_language} out of range for {cs.num_languages} languages")
    if not r.phoneme_ids:
        raise ContractError("empty phoneme sequence")
    bad = [p for p in r.phoneme_ids if not 0 <= p < cs.num_phonemes]
    if bad:
        raise ContractError(f"phoneme id {bad[0]} out of range for {cs.num_phonemes} phonemes")


def predict_durations(model: MultilingualTTS, request: InferenceRequest) -> np.ndarray:
    _check_request(model, request)
    with ag.no_grad():
        h = model.encode(list(request.phoneme_ids), request.target_language)
        spk = model.speaker_embedding(request.speaker) if resolve_intralingual(model, request) else ZERO
        return discretize_durations(model.duration_predictor(h, spk, model.language_embedding(request.target_language)))


def infer(model: MultilingualTTS, request: InferenceRequest) -> tuple[np.ndarray, np.ndarray]:
    """Durations and decoded frames. Cross-lingual requests feed a zero
    vector to the duration predictor; the decoder always sees the speaker."""
    _check_request(model, request)
    with ag.no_grad():
        lang = model.language_embedding(request.target_language)
        spk = model.speaker_embedding(request.speaker)
        h = model.encode(list(request.phoneme_ids), request.target_language)
        cond = spk if resolve_intralingual(model, request) else ZERO
        d = discretize_durations(model.duration_predictor(h, cond, lang))
        frames = model.decoder(length_regulate(h, d), spk, lang)
    return d, frames.data.copy()
