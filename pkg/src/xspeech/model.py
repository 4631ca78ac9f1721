"""The cross-lingual acoustic model.

Pipeline per utterance::

    tokens + language emb + positions -> text encoder -> h_t
    h_t --DSLN(e_s)------------------------------> A   (plain branch)
    h_t --M-DSLN(e_s, shuffled e_s, gamma)-------> B   (mixed branch, training only)
    KL consistency between A and B
    B -> duration predictor, contour predictor; B + contour embedding
      -> length regulator -> speaker-independent decoder -> h_si
    h_si -> DSLN(e_s) -> frame pitch predictor; + pitch embedding
      -> speaker-dependent decoder -> h_sd
    mel = proj(h_sd) + residual_proj(h_si)

In eval mode the mixed branch is replaced by the plain one, durations come
from the duration predictor, the contour is thresholded and the frame pitch
is the predicted one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .aligner import Aligner, AlignmentResult, duration_loss, durations_from_log
from .autodiff import ConfigurationError, Tensor
from .conditioning import SpeakerConditioner, sample_gamma, sgr_loss, shuffle_speakers
from .data import Utterance
from .layers import EmbeddingTables, FFTBlockParams, FFTStack, Linear, Module, length_regulate, positional_encoding
from .pitch import PitchEmbedding, VariancePredictor, average_pitch, binarize_contour, sdp_loss, sip_loss

LOSS_TERMS = ("rec", "align", "dur", "sgr", "sip", "sdp")


class DataError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_tokens: int = 36
    n_speakers: int = 6
    n_languages: int = 3
    model_dim: int = 64
    n_heads: int = 2
    conv_kernel_size: int = 3
    conv_hidden_dim: int = 128
    dropout_rate: float = 0.1
    encoder_blocks: int = 2
    decoder_blocks: int = 3
    predictor_filter_dim: int = 64
    predictor_kernel_size: int = 3
    conditioner_kernel_size: int = 1
    aligner_dim: int = 32
    aligner_prior_scaling: float = 1.0
    n_mel_bins: int = 80
    lambda_dur: float = 0.1
    lambda_sgr: float = 0.1
    lambda_sip: float = 0.1
    lambda_sdp: float = 0.1
    beta_alpha: float = 2.0
    language_injection: str = "encoder_input"
    use_mdsln: bool = True
    use_sip: bool = True
    use_sdp: bool = True
    use_residual: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lambda_dur", "lambda_sgr", "lambda_sip", "lambda_sdp"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.n_mel_bins < 1:
            raise ConfigurationError("n_mel_bins must be >= 1")
        if self.beta_alpha <= 0:
            raise ConfigurationError("beta_alpha must be > 0")
        if self.language_injection not in ("encoder_input", "encoder_output"):
            raise ConfigurationError(f"unknown language_injection {self.language_injection!r}")
        self.fft_params()

    def fft_params(self) -> FFTBlockParams:
        return FFTBlockParams(self.model_dim, self.n_heads, self.conv_kernel_size,
                              self.conv_hidden_dim, self.dropout_rate)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {unknown}")
        return cls(**d)


@dataclass
class LossBreakdown:
    rec: Tensor
    align: Tensor
    dur: Tensor
    sgr: Tensor
    sip: Tensor
    sdp: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {name: float(getattr(self, name).data) for name in LOSS_TERMS + ("total",)}


@dataclass
class ForwardOutput:
    mel_pred: Tensor
    h_si: Tensor
    h_sd: Tensor
    sip_logits: Tensor | None
    sdp_pred: Tensor | None
    dur_pred: Tensor
    alignment: AlignmentResult | None
    durations: np.ndarray
    extras: dict = field(default_factory=dict)


def combine_losses(parts: dict[str, Tensor], config: ModelConfig) -> Tensor:
    return (
        parts["rec"]
        + parts["align"]
        + parts["dur"] * config.lambda_dur
        + parts["sgr"] * config.lambda_sgr
        + parts["sip"] * config.lambda_sip
        + parts["sdp"] * config.lambda_sdp
    )


class CrossSpeechModel(Module):
    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng([config.seed, 17])
        d = config.model_dim
        fp = config.fft_params()
        self.embeddings = EmbeddingTables(config.n_tokens, config.n_speakers, config.n_languages, d, rng, dtype)
        self.encoder = FFTStack(config.encoder_blocks, fp, rng, dtype)
        self.text_conditioner = SpeakerConditioner(d, d, rng, config.conditioner_kernel_size, dtype)
        self.duration_predictor = VariancePredictor(d, config.predictor_filter_dim, config.predictor_kernel_size,
                                                    rng, dtype, config.dropout_rate)
        self.sip_head = VariancePredictor(d, config.predictor_filter_dim, config.predictor_kernel_size,
                                          rng, dtype, config.dropout_rate) if config.use_sip else None
        self.sip_embedding = PitchEmbedding(d, rng, dtype=dtype) if config.use_sip else None
        self.sig_decoder = FFTStack(config.decoder_blocks, fp, rng, dtype)
        self.sdg_conditioner = SpeakerConditioner(d, d, rng, config.conditioner_kernel_size, dtype)
        self.sdp_head = VariancePredictor(d, config.predictor_filter_dim, config.predictor_kernel_size,
                                          rng, dtype, config.dropout_rate) if config.use_sdp else None
        self.sdp_embedding = PitchEmbedding(d, rng, dtype=dtype) if config.use_sdp else None
        self.sdg_decoder = FFTStack(config.decoder_blocks, fp, rng, dtype)
        self.mel_proj = Linear(d, config.n_mel_bins, rng, dtype)
        self.residual_proj = Linear(d, config.n_mel_bins, rng, dtype) if config.use_residual else None
        self.aligner = Aligner(d, config.n_mel_bins, config.aligner_dim, rng, dtype,
                               config.aligner_prior_scaling)

    @property
    def dtype(self):
        return self.embeddings.tokens.dtype

    # -- shared pieces ----------------------------------------------------
    def _check_ids(self, tokens, speaker_id: int, language_id: int) -> None:
        c = self.config
        if not 0 <= speaker_id < c.n_speakers:
            raise IndexError(f"unknown speaker id {speaker_id} (have {c.n_speakers})")
        if not 0 <= language_id < c.n_languages:
            raise IndexError(f"unknown language id {language_id} (have {c.n_languages})")
        tokens = np.asarray(tokens)
        if tokens.size == 0:
            raise DataError("empty token sequence")
        if tokens.min() < 0 or tokens.max() >= c.n_tokens:
            raise IndexError(f"token id out of range [0, {c.n_tokens})")

    def text_input(self, tokens, language_id: int) -> Tensor:
        n = len(tokens)
        x = self.embeddings.token(tokens)
        if self.config.language_injection == "encoder_input":
            x = x + ad.gather_rows(self.embeddings.languages, np.full(n, language_id))
        return x

    def encode(self, x: Tensor, language_id: int, rng=None) -> Tensor:
        n = x.shape[0]
        h = self.encoder(x + positional_encoding(n, self.config.model_dim, self.dtype), rng=rng)
        if self.config.language_injection == "encoder_output":
            h = h + ad.gather_rows(self.embeddings.languages, np.full(n, language_id))
        return h

    def _decode(self, hidden: Tensor, durations, e_s: Tensor, frame_pitch, rng=None):
        up = length_regulate(hidden, durations)
        t = up.shape[0]
        h_si = self.sig_decoder(up + positional_encoding(t, self.config.model_dim, self.dtype), rng=rng)
        adapted = self.sdg_conditioner.dsln(h_si, e_s)
        sdp_pred = None
        if self.sdp_head is not None:
            sdp_pred = self.sdp_head(adapted, rng)
            pitch_in = sdp_pred.data if frame_pitch is None else frame_pitch
            adapted = adapted + self.sdp_embedding(pitch_in)
        h_sd = self.sdg_decoder(adapted, rng=rng)
        mel = self.mel_proj(h_sd)
        if self.residual_proj is not None:
            mel = mel + self.residual_proj(h_si)
        return mel, h_si, h_sd, sdp_pred

    # -- training -------------------------------------------------------------
    def forward_train(self, batch: list[Utterance], rng: np.random.Generator):
        """Run the training graph on ``batch``; every loss term is a batch mean."""
        if not batch:
            raise DataError("empty batch")
        if not self.training:
            raise RuntimeError("forward_train requires train mode")
        c = self.config
        for u in batch:
            if u.mel is None or u.frame_pitch is None:
                raise DataError("utterance is missing mel or frame pitch")
            if len(u.frame_pitch) != u.mel.shape[0]:
                raise DataError(f"pitch length {len(u.frame_pitch)} != mel frames {u.mel.shape[0]}")
            self._check_ids(u.token_ids, u.speaker_id, u.language_id)

        speakers = self.embeddings.speaker(np.array([u.speaker_id for u in batch]))
        if c.use_mdsln:
            shuffled, perm = shuffle_speakers(speakers, rng)
            gammas = sample_gamma(rng, c.beta_alpha, size=len(batch))
        outputs, parts = [], {k: [] for k in LOSS_TERMS}
        for b, u in enumerate(batch):
            e_s = speakers[b]
            x = self.text_input(u.token_ids, u.language_id)
            h_t = self.encode(x, u.language_id, rng)
            plain = self.text_conditioner.dsln(h_t, e_s)
            if c.use_mdsln:
                mixed = self.text_conditioner.m_dsln(h_t, e_s, shuffled[b], float(gammas[b]))
            else:
                mixed = plain
            parts["sgr"].append(sgr_loss(plain, mixed))

            target = Tensor(np.asarray(u.mel, dtype=self.dtype))
            alignment = self.aligner(x, target)
            durations = alignment.durations
            parts["align"].append(alignment.loss_align * (1.0 / u.mel.shape[0]))

            dur_pred = self.duration_predictor(mixed, rng)
            parts["dur"].append(duration_loss(dur_pred, durations))

            hidden = mixed
            sip_logits = None
            if self.sip_head is not None:
                contour = binarize_contour(average_pitch(u.frame_pitch, durations))
                sip_logits = self.sip_head(mixed, rng)
                parts["sip"].append(sip_loss(sip_logits, contour))
                hidden = hidden + self.sip_embedding(contour)

            mel, h_si, h_sd, sdp_pred = self._decode(hidden, durations, e_s, u.frame_pitch, rng)
            if sdp_pred is not None:
                parts["sdp"].append(sdp_loss(sdp_pred, u.frame_pitch))
            parts["rec"].append(ad.mse(mel, target))
            outputs.append(ForwardOutput(mel, h_si, h_sd, sip_logits, sdp_pred, dur_pred, alignment, durations))

        zero = Tensor(np.zeros((), dtype=self.dtype))
        means = {}
        for k in LOSS_TERMS:
            terms = parts[k]
            if not terms:
                means[k] = zero
                continue
            acc = terms[0]
            for term in terms[1:]:
                acc = acc + term
            means[k] = acc * (1.0 / len(terms))
        losses = LossBreakdown(**means, total=combine_losses(means, c))
        return outputs, losses

    # -- inference --------------------------------------------------------------
    def infer(self, tokens, speaker_id: int, language_id: int) -> ForwardOutput:
        if self.training:
            raise RuntimeError("inference requires eval mode")
        tokens = np.asarray(tokens, dtype=np.int64)
        self._check_ids(tokens, speaker_id, language_id)
        with ad.no_grad():
            e_s = self.embeddings.speaker(speaker_id)[0]
            x = self.text_input(tokens, language_id)
            h_t = self.encode(x, language_id)
            hidden = self.text_conditioner.dsln(h_t, e_s)
            dur_pred = self.duration_predictor(hidden)
            durations = durations_from_log(dur_pred)
            sip_logits = None
            if self.sip_head is not None:
                sip_logits = self.sip_head(hidden)
                bits = (sip_logits.data > 0).astype(np.int64)
                hidden = hidden + self.sip_embedding(bits)
            mel, h_si, h_sd, sdp_pred = self._decode(hidden, durations, e_s, None)
        return ForwardOutput(mel, h_si, h_sd, sip_logits, sdp_pred, dur_pred, None, durations)

    def forward_infer(self, tokens, speaker_id: int, language_id: int) -> np.ndarray:
        return self.infer(tokens, speaker_id, language_id).mel_pred.data

    def speaker_swap_probe(self, tokens, language_id: int, speakers):
        """Same text under two speakers: ``(h_si_1, h_si_2, mel_1, mel_2)``."""
        s1, s2 = speakers
        a = self.infer(tokens, s1, language_id)
        b = self.infer(tokens, s2, language_id)
        return a.h_si.data, b.h_si.data, a.mel_pred.data, b.mel_pred.data

    def projected_h_si(self, out: ForwardOutput) -> np.ndarray:
        """``h_si`` mapped to mel space by the residual projection (or the mel
        projection when the residual path is ablated)."""
        proj = self.residual_proj if self.residual_proj is not None else self.mel_proj
        with ad.no_grad():
            return proj(out.h_si).data
