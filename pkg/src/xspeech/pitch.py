"""Pitch targets and the two pitch predictor heads.

Token-level pitch is the mean of frame pitch over each token's duration
window. The speaker-independent contour marks a strict rise relative to the
previous token; the first token has no predecessor and is always 0.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .layers import Conv1d, LayerNorm, Linear, Module


def average_pitch(frame_pitch, durations) -> np.ndarray:
    frame_pitch = np.asarray(frame_pitch, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.int64)
    if durations.sum() != len(frame_pitch):
        raise DimensionError(
            f"durations sum to {int(durations.sum())} but there are {len(frame_pitch)} frames"
        )
    ends = np.cumsum(durations)
    starts = ends - durations
    out = np.zeros(len(durations))
    for n, (lo, hi) in enumerate(zip(starts, ends)):
        if hi > lo:
            # mean taken relative to the first frame, exact for constant segments
            seg = frame_pitch[lo:hi]
            out[n] = seg[0] + (seg - seg[0]).mean()
    return out


def binarize_contour(token_pitch) -> np.ndarray:
    token_pitch = np.asarray(token_pitch)
    if token_pitch.ndim != 1 or len(token_pitch) == 0:
        raise DimensionError("binarize_contour needs a non-empty 1-d sequence")
    bits = np.zeros(len(token_pitch), dtype=np.int64)
    bits[1:] = token_pitch[1:] > token_pitch[:-1]
    return bits


class VariancePredictor(Module):
    """Two conv/activation/norm/dropout stages and a linear read-out to one value per step.

    Shared topology for the contour, frame-pitch, and duration predictors.
    """

    def __init__(self, in_dim: int, filter_dim: int, kernel_size: int, rng, dtype=np.float32,
                 dropout_rate: float = 0.1):
        self.conv1 = Conv1d(in_dim, filter_dim, kernel_size, rng, dtype)
        self.norm1 = LayerNorm(filter_dim, dtype)
        self.conv2 = Conv1d(filter_dim, filter_dim, kernel_size, rng, dtype)
        self.norm2 = LayerNorm(filter_dim, dtype)
        self.proj = Linear(filter_dim, 1, rng, dtype)
        self.dropout_rate = dropout_rate

    def __call__(self, h: Tensor, rng=None) -> Tensor:
        train = self.training and rng is not None
        y = self.norm1(ad.gelu(self.conv1(h)))
        y = ad.dropout(y, self.dropout_rate, rng, train)
        y = self.norm2(ad.gelu(self.conv2(y)))
        y = ad.dropout(y, self.dropout_rate, rng, train)
        return self.proj(y).reshape(h.shape[0])


def sip_loss(logits: Tensor, contour) -> Tensor:
    contour = np.asarray(contour)
    if contour.shape != logits.shape:
        raise DimensionError(f"sip_loss: {logits.shape[0]} logits for {len(contour)} contour bits")
    return ad.bce_with_logits(logits, contour)


def sdp_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise DimensionError(f"sdp_loss: prediction length {pred.shape} vs target length {target.shape}")
    return ad.mse(pred, target)


class PitchEmbedding(Module):
    """Lift a scalar-per-step sequence to the model width with one kernel-3 conv."""

    def __init__(self, model_dim: int, rng, kernel_size: int = 3, dtype=np.float32):
        self.conv = Conv1d(1, model_dim, kernel_size, rng, dtype)

    def __call__(self, values) -> Tensor:
        if isinstance(values, Tensor):
            x = values.reshape(values.shape[0], 1)
        else:
            x = Tensor(np.asarray(values, dtype=self.conv.weight.dtype).reshape(-1, 1))
        return self.conv(x)


def pitch_to_embedding(values, embedding: PitchEmbedding) -> Tensor:
    return embedding(values)
