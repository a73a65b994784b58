import numpy as np
import pytest

from mltts import autograd as ag
from mltts.autograd import ContractError
from mltts.corpus import Utterance
from mltts.gradcheck import finite_difference_check
from mltts.layers import ConfigurationError
from mltts.model import (
    FrameDecoder,
    InferenceRequest,
    MultilingualTTS,
    infer,
    model_forward_train,
    predict_durations,
)

from conftest import SEEDS, tiny_config, tiny_spec


def forward(model, batch):
    with ag.no_grad():
        return model_forward_train(model, batch)


def test_registry_names_unique_and_complete(tiny_model):
    reg = tiny_model.named_parameters()
    assert len(reg) == len({id(t) for t in reg.values()})
    for prefix in ("speakers.", "languages.", "encoder.generator.", "speaker_projection.",
                   "duration_predictor.", "classifier.", "decoder."):
        assert any(k.startswith(prefix) for k in reg)
    # the duration predictor shares the projection instead of owning a copy
    assert tiny_model.duration_predictor.speaker_conv is tiny_model.speaker_projection
    assert not any(k.startswith("duration_predictor.speaker_conv") for k in reg)


def test_unshared_projection_registers_its_own_conv(tiny_corpus):
    model = MultilingualTTS(tiny_config(share_speaker_projection=False), tiny_corpus.spec)
    assert any(k.startswith("duration_predictor.speaker_conv") for k in model.named_parameters())


def test_flags_off_zero_adversarial_terms(tiny_corpus):
    model = MultilingualTTS(tiny_config(enable_dat=False, enable_reg_loss=False), tiny_corpus.spec)
    b, _ = forward(model, list(tiny_corpus)[:3])
    assert b.speaker_cls == 0.0 and b.speaker_reg == 0.0


def test_singleton_batch_reg_is_projection_norm(tiny_model, tiny_corpus):
    utt = tiny_corpus[4]
    b, _ = forward(tiny_model, [utt])
    with ag.no_grad():
        v = tiny_model.speaker_projection(tiny_model.speakers(utt.speaker_id)).data
    assert b.speaker_reg == pytest.approx(np.linalg.norm(v), rel=1e-14)


def test_total_is_weighted_sum(tiny_corpus):
    model = MultilingualTTS(tiny_config(w_dur=0.7, w_reg=2.5), tiny_corpus.spec)
    model.grl.lam = 0.4
    b, total = forward(model, list(tiny_corpus)[:4])
    assert b.total == b.reconstruction + 0.7 * b.duration + b.speaker_cls + 2.5 * b.speaker_reg
    assert b.lam == 0.4


def test_empty_batch(tiny_model):
    with pytest.raises(ContractError):
        forward(tiny_model, [])


def test_feature_dim_mismatch(tiny_model, tiny_corpus):
    u = tiny_corpus[0]
    bad = Utterance(u.utterance_id, u.speaker_id, u.language_id, u.phoneme_ids, u.durations,
                    np.zeros((u.num_frames, 7)))
    with pytest.raises(ConfigurationError):
        forward(tiny_model, [bad])


def _flag_grads(model, batch, names):
    with ag.Tape() as tape:
        _, total = model_forward_train(model, batch)
    ag.backward(tape, total)
    reg = model.named_parameters()
    return {n: reg[n].grad for n in names}


def test_disabling_dat_removes_classifier_gradients(tiny_corpus):
    model = MultilingualTTS(tiny_config(enable_dat=False), tiny_corpus.spec)
    names = [k for k in model.named_parameters() if k.startswith("classifier.")]
    for g in _flag_grads(model, list(tiny_corpus)[:4], names).values():
        assert not np.any(g)


def test_disabling_reg_and_sharing_removes_projection_gradients(tiny_corpus):
    model = MultilingualTTS(tiny_config(enable_reg_loss=False, share_speaker_projection=False), tiny_corpus.spec)
    names = [k for k in model.named_parameters() if k.startswith("speaker_projection.")]
    for g in _flag_grads(model, list(tiny_corpus)[:4], names).values():
        assert not np.any(g)


def test_dat_reaches_encoder_only_through_reversal(tiny_corpus):
    model = MultilingualTTS(tiny_config(), tiny_corpus.spec)
    model.grl.lam = 0.0
    names = [k for k in model.named_parameters() if k.startswith("classifier.")]
    grads = _flag_grads(model, list(tiny_corpus)[:4], names)
    assert any(np.any(g) for g in grads.values())


@pytest.mark.parametrize("source", ["oracle", "mas"])
@pytest.mark.parametrize("seed", SEEDS)
def test_end_to_end_gradcheck(tiny_corpus, seed, source, monkeypatch):
    # the stop-gradient on the duration-predictor input is off so the tape and
    # the differences see the same function
    cfg = tiny_config(seed=seed, duration_source=source, detach_duration_input=False)
    model = MultilingualTTS(cfg, tiny_corpus.spec)
    # a reversal scale of -1 is a plain identity in both directions, so the
    # tape gradient is the true derivative of the total loss
    model.grl.lam = -1.0
    reg = model.named_parameters()
    rng = np.random.default_rng(seed)
    picked = {k: reg[k] for k in rng.choice(sorted(reg), size=5, replace=False)}
    batch = [tiny_corpus[i] for i in rng.choice(len(tiny_corpus), size=2, replace=False)]

    if source == "mas":
        # alignment search is piecewise constant; freeze the paths found at the
        # unperturbed point so differences do not straddle a path switch
        import mltts.model as model_mod

        frozen, calls = [], iter(())
        real = model_mod.mas_search

        def frozen_mas(scores):
            nonlocal calls
            if len(frozen) < len(batch):
                frozen.append(real(scores))
                return frozen[-1]
            try:
                return next(calls)
            except StopIteration:
                calls = iter(frozen)
                return next(calls)

        monkeypatch.setattr(model_mod, "mas_search", frozen_mas)

    def f():
        return model_forward_train(model, batch)[1]

    rep = finite_difference_check(f, picked, max_entries=4, rng=rng)
    assert rep.passed, rep.worst()


@pytest.mark.parametrize("seed", SEEDS)
def test_decoder_gradcheck(seed):
    rng = np.random.default_rng(seed)
    dec = FrameDecoder(4, 3, 2, rng, activation="tanh")
    x = ag.parameter(rng.standard_normal((5, 4)))
    spk = ag.parameter(rng.standard_normal(3))
    lang = ag.parameter(rng.standard_normal(3))
    target = rng.standard_normal((5, 2))
    params = {"x": x, "spk": spk, "lang": lang, **dec.named_parameters("dec")}
    rep = finite_difference_check(lambda: ag.mse(dec(x, spk, lang), target), params)
    assert rep.passed, rep.worst()


# -- inference ---------------------------------------------------------------------
def _text(spec, lang, n=5, seed=0):
    r = spec.phoneme_range(lang)
    return tuple(np.random.default_rng(seed).integers(r.start, r.stop, size=n).tolist())


def test_crosslingual_durations_identical_frames_differ(tiny_model):
    spec = tiny_model.corpus_spec
    text = _text(spec, 1)
    d0, f0 = infer(tiny_model, InferenceRequest(text, 1, 0, "auto"))
    d1, f1 = infer(tiny_model, InferenceRequest(text, 1, 1, "auto"))
    assert d0.tobytes() == d1.tobytes()
    assert f0.shape == f1.shape and np.any(f0 != f1)


def test_intralingual_durations_depend_on_speaker(tiny_corpus):
    model = MultilingualTTS(tiny_config(seed=3), tiny_corpus.spec)
    # widen the output layer so rounding cannot hide the difference
    model.duration_predictor.out.weight.data *= 20.0
    text = _text(tiny_corpus.spec, 0, n=8)
    a = predict_durations(model, InferenceRequest(text, 0, 0, "force-intralingual"))
    b = predict_durations(model, InferenceRequest(text, 0, 1, "force-intralingual"))
    assert np.any(a != b)


def test_force_intralingual_matches_auto_in_native_language(tiny_model):
    text = _text(tiny_model.corpus_spec, 0)
    a = infer(tiny_model, InferenceRequest(text, 0, 1, "auto"))
    b = infer(tiny_model, InferenceRequest(text, 0, 1, "force-intralingual"))
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_frame_count_matches_durations(tiny_model):
    d, frames = infer(tiny_model, InferenceRequest(_text(tiny_model.corpus_spec, 0), 0, 0))
    assert frames.shape == (d.sum(), tiny_model.corpus_spec.feature_dim)


@pytest.mark.parametrize("req", [
    dict(phoneme_ids=(0, 1), target_language=0, speaker=99),
    dict(phoneme_ids=(0, 1), target_language=7, speaker=0),
    dict(phoneme_ids=(0, 1000), target_language=0, speaker=0),
    dict(phoneme_ids=(), target_language=0, speaker=0),
])
def test_unknown_ids(tiny_model, req):
    with pytest.raises(ContractError):
        infer(tiny_model, InferenceRequest(**req))


def test_unknown_mode():
    with pytest.raises(ContractError):
        InferenceRequest((0,), 0, 0, "sideways")
