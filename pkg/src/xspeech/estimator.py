"""scikit-learn style front end for the acoustic model.

``CrossSpeech`` exposes the usual ``fit`` / ``predict`` / ``get_params``
surface so it can sit in model-selection tooling; ``X`` is a list of
``Utterance`` objects rather than a feature matrix.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Utterance
from .diagnostics import ablate, contour_accuracy, probe_report
from .model import ModelConfig
from .trainer import TrainConfig, Trainer
from .validation import check_corpus, check_token_ids


class CrossSpeech(BaseEstimator):
    """Cross-lingual acoustic model estimator.

    Vocabulary, speaker and language counts default to what is seen in the
    training corpus; pass them explicitly to reserve unused ids.
    """

    def __init__(self, n_tokens=None, n_speakers=None, n_languages=None, model_dim=64, n_heads=2,
                 decoder_blocks=3, encoder_blocks=2, dropout_rate=0.1, lambda_dur=0.1, lambda_sgr=0.1,
                 lambda_sip=0.1, lambda_sdp=0.1, beta_alpha=2.0, batch_size=16, total_steps=1500,
                 warmup_steps=100, lr_scale=0.02, grad_clip_norm=1.0, lamb=True, ablations=(), seed=0):
        self.n_tokens = n_tokens
        self.n_speakers = n_speakers
        self.n_languages = n_languages
        self.model_dim = model_dim
        self.n_heads = n_heads
        self.decoder_blocks = decoder_blocks
        self.encoder_blocks = encoder_blocks
        self.dropout_rate = dropout_rate
        self.lambda_dur = lambda_dur
        self.lambda_sgr = lambda_sgr
        self.lambda_sip = lambda_sip
        self.lambda_sdp = lambda_sdp
        self.beta_alpha = beta_alpha
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.warmup_steps = warmup_steps
        self.lr_scale = lr_scale
        self.grad_clip_norm = grad_clip_norm
        self.lamb = lamb
        self.ablations = ablations
        self.seed = seed

    def _configs(self, corpus):
        mconf = ModelConfig(
            n_tokens=self.n_tokens or max(int(u.token_ids.max()) for u in corpus) + 1,
            n_speakers=self.n_speakers or max(u.speaker_id for u in corpus) + 1,
            n_languages=self.n_languages or max(u.language_id for u in corpus) + 1,
            model_dim=self.model_dim, n_heads=self.n_heads, decoder_blocks=self.decoder_blocks,
            encoder_blocks=self.encoder_blocks, dropout_rate=self.dropout_rate,
            n_mel_bins=corpus[0].mel.shape[1], lambda_dur=self.lambda_dur, lambda_sgr=self.lambda_sgr,
            lambda_sip=self.lambda_sip, lambda_sdp=self.lambda_sdp, beta_alpha=self.beta_alpha, seed=self.seed,
        )
        tconf = TrainConfig(batch_size=self.batch_size, total_steps=self.total_steps,
                            warmup_steps=self.warmup_steps, lr_scale=self.lr_scale,
                            grad_clip_norm=self.grad_clip_norm, lamb=self.lamb, seed=self.seed)
        return ablate(mconf, self.ablations), tconf

    def fit(self, X: list[Utterance], y=None):
        corpus = check_corpus(X)
        mconf, tconf = self._configs(corpus)
        self.trainer_ = Trainer(corpus, mconf, tconf)
        self.history_ = self.trainer_.run()
        self.model_ = self.trainer_.model.eval()
        self.config_ = mconf
        return self

    def predict(self, tokens, speaker_id: int, language_id: int) -> np.ndarray:
        """Mel spectrogram ``[frames, bins]`` for any speaker/language pairing."""
        check_is_fitted(self, "model_")
        tokens = check_token_ids(tokens, self.config_.n_tokens)
        return self.model_.forward_infer(tokens, speaker_id, language_id)

    def transform(self, X: list[Utterance]) -> list[np.ndarray]:
        """Speaker-independent representation ``h_si`` of each utterance's text."""
        check_is_fitted(self, "model_")
        return [self.model_.infer(u.token_ids, u.speaker_id, u.language_id).h_si.data for u in check_corpus(X)]

    def score(self, X: list[Utterance], y=None) -> float:
        """Held-out contour accuracy."""
        check_is_fitted(self, "model_")
        return contour_accuracy(self.model_, check_corpus(X))

    def probe(self, X: list[Utterance], per_language: int = 10):
        check_is_fitted(self, "model_")
        return probe_report(self.model_, check_corpus(X), per_language)
