import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from xspeech.data import ToyCorpusSpec, Utterance, generate_corpus
from xspeech.estimator import CrossSpeech
from xspeech.validation import check_corpus, check_token_ids, check_utterance

SPEC = ToyCorpusSpec(utterances_per_speaker=3, n_mel_bins=8, tokens_per_utterance=(2, 4), frames_per_token=(1, 3))


def small_estimator(**kw):
    params = dict(model_dim=8, n_heads=2, encoder_blocks=1, decoder_blocks=1, batch_size=4,
                  total_steps=3, warmup_steps=2)
    params.update(kw)
    return CrossSpeech(**params)


@pytest.fixture(scope="module")
def fitted():
    return small_estimator().fit(generate_corpus(SPEC))


def test_get_params_and_clone():
    est = small_estimator(ablations=("no_sip",))
    assert est.get_params()["ablations"] == ("no_sip",)
    assert clone(est).get_params() == est.get_params()


def test_unfitted_predict_raises():
    with pytest.raises(NotFittedError):
        small_estimator().predict([0, 1], 0, 0)


def test_fit_records_history(fitted):
    assert len(fitted.history_) == 3
    assert fitted.config_.n_speakers == 6 and fitted.config_.n_mel_bins == 8


def test_predict_cross_lingual(fitted):
    mel = fitted.predict([12, 13, 14], speaker_id=0, language_id=1)
    assert mel.shape[1] == 8 and np.isfinite(mel).all()


def test_transform_returns_h_si(fitted):
    corpus = generate_corpus(SPEC)[:2]
    reps = fitted.transform(corpus)
    assert len(reps) == 2 and reps[0].shape[1] == 8


def test_score_is_a_fraction(fitted):
    assert 0.0 <= fitted.score(generate_corpus(SPEC, stream=2)) <= 1.0


def test_ablation_applied():
    est = small_estimator(ablations=("no_residual",), total_steps=1).fit(generate_corpus(SPEC))
    assert est.model_.residual_proj is None


class TestValidation:
    def test_token_ids(self):
        np.testing.assert_array_equal(check_token_ids([1.0, 2.0]), [1, 2])
        for bad in ([], [[1]], [1.5], [-1]):
            with pytest.raises(ValueError):
                check_token_ids(bad)
        with pytest.raises(ValueError):
            check_token_ids([5], n_tokens=5)

    def test_utterance(self):
        u = generate_corpus(SPEC)[0]
        assert check_utterance(u) is u
        short = Utterance(u.token_ids, 0, 0, u.mel[:1], u.frame_pitch[:1])
        with pytest.raises(ValueError, match="cover"):
            check_utterance(short)
        bad_pitch = Utterance(u.token_ids, 0, 0, u.mel, u.frame_pitch[:-1])
        with pytest.raises(ValueError, match="pitch"):
            check_utterance(bad_pitch)
        with pytest.raises(TypeError):
            check_utterance("not an utterance")

    def test_corpus(self):
        with pytest.raises(ValueError, match="empty"):
            check_corpus([])
        a = generate_corpus(SPEC)[0]
        b = generate_corpus(ToyCorpusSpec(utterances_per_speaker=1))[0]
        with pytest.raises(ValueError, match="bin"):
            check_corpus([a, b])
