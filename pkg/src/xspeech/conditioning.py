"""Speaker-conditioned layer normalisation and its mixing regulariser.

``SpeakerConditioner`` predicts a conv filter and bias from a speaker
embedding with a single affine map. ``dsln`` applies them to a layer-normed
sequence; ``m_dsln`` first blends the filter/bias of the true speaker with
those of a batch-shuffled speaker using a Beta-distributed weight.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .layers import Module, _param


class ModeError(RuntimeError):
    """An operation was called in the wrong train/eval mode."""


class SpeakerConditioner(Module):
    """Single linear layer ``e_s -> (W(e_s), b(e_s))``.

    The filter is ``[K, D, D]``. The predictor's bias starts at an identity
    filter and zero shift, so a fresh conditioner behaves like plain layer norm
    plus a small speaker-dependent perturbation.
    """

    def __init__(self, speaker_dim: int, model_dim: int, rng: np.random.Generator,
                 kernel_size: int = 1, dtype=np.float32, init_scale: float = 0.02):
        if kernel_size % 2 == 0:
            raise ad.ConfigurationError(f"conditioner kernel size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.model_dim = model_dim
        n_w = kernel_size * model_dim * model_dim
        ident = np.zeros((kernel_size, model_dim, model_dim))
        ident[kernel_size // 2] = np.eye(model_dim)
        self.weight = _param(rng.normal(0.0, init_scale, (speaker_dim, n_w + model_dim)), dtype)
        self.bias = _param(np.concatenate([ident.reshape(-1), np.zeros(model_dim)]), dtype)

    def __call__(self, e_s: Tensor) -> tuple[Tensor, Tensor]:
        k, d = self.kernel_size, self.model_dim
        flat = ad.matmul(e_s.reshape(1, -1), self.weight) + self.bias
        n_w = k * d * d
        return flat[0, :n_w].reshape(k, d, d), flat[0, n_w:]

    def dsln(self, h: Tensor, e_s: Tensor) -> Tensor:
        w, b = self(e_s)
        return modulate(h, w, b)

    def m_dsln(self, h_t: Tensor, e_s: Tensor, e_shuf: Tensor, gamma: float) -> Tensor:
        if not self.training:
            raise ModeError("m_dsln is a training-only regulariser; use dsln in eval mode")
        w, b = mix_conditioners(self, e_s, e_shuf, gamma)
        return modulate(h_t, w, b)


def modulate(h: Tensor, w: Tensor, b: Tensor, eps: float = 1e-5) -> Tensor:
    """``W * LN(h) + b`` with ``*`` a same-padded 1-d convolution."""
    return ad.conv1d(ad.layer_norm(h, eps), w, b)


def dsln(h: Tensor, e_s: Tensor, conditioner: SpeakerConditioner) -> Tensor:
    return conditioner.dsln(h, e_s)


def m_dsln(h_t: Tensor, e_s: Tensor, e_shuf: Tensor, gamma: float, conditioner: SpeakerConditioner) -> Tensor:
    return conditioner.m_dsln(h_t, e_s, e_shuf, gamma)


def mix_conditioners(conditioner: SpeakerConditioner, e_s: Tensor, e_shuf: Tensor, gamma: float):
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    w, b = conditioner(e_s)
    if gamma == 1.0 or np.array_equal(e_s.data, e_shuf.data):
        # mixing a speaker with itself is the identity; skip it so the result is exact
        return w, b
    w_s, b_s = conditioner(e_shuf)
    return w * gamma + w_s * (1.0 - gamma), b * gamma + b_s * (1.0 - gamma)


def shuffle_speakers(embeddings: Tensor, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """Permute rows of a ``[B, D]`` speaker batch; returns the permutation too."""
    perm = rng.permutation(embeddings.shape[0])
    return ad.gather_rows(embeddings, perm), perm


def sample_gamma(rng: np.random.Generator, alpha: float = 2.0, size=None):
    if alpha <= 0:
        raise ValueError(f"Beta concentration must be positive, got {alpha}")
    return rng.beta(alpha, alpha, size=size)


def _directed_kl(ref_logits: Tensor, logits: Tensor) -> Tensor:
    # ref is gradient-stopped; only ``logits`` receives gradient
    ref_logp = ad.log_softmax(ad.stop_gradient(ref_logits), axis=-1).data
    ref_p = np.exp(ref_logp)
    logq = ad.log_softmax(logits, axis=-1)
    # elementwise form keeps each term >= 0 up to rounding of the log ratio
    per_pos = ((-logq + ref_logp) * ref_p).sum()
    return per_pos * (1.0 / logits.shape[0])


def sgr_loss(out_dsln: Tensor, out_mdsln: Tensor) -> Tensor:
    """Symmetric channel-softmax KL between the two conditioned encodings.

    ``KL(P_dsln || P_mix)`` sends gradient only to the mixed branch and
    ``KL(P_mix || P_dsln)`` only to the plain branch. Averaged over positions.
    """
    if out_dsln.shape != out_mdsln.shape:
        raise DimensionError(f"sgr_loss: shape mismatch {out_dsln.shape} vs {out_mdsln.shape}")
    return _directed_kl(out_dsln, out_mdsln) + _directed_kl(out_mdsln, out_dsln)
