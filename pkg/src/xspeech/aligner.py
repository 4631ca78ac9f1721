"""Online text-to-mel aligner.

Soft alignment is a per-frame softmax over negative squared distances between
projected mel frames and projected token encodings. The forward-sum loss is
the negative log of the total probability of every monotonic path that starts
on the first token, ends on the last, and at each frame either stays or
advances by one token. Hard durations come from the best such path.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import betabinom

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .layers import Conv1d, Module


class AlignmentError(ValueError):
    """Fewer frames than tokens: no complete monotonic path exists."""


@dataclass
class AlignmentResult:
    soft: Tensor
    loss_align: Tensor
    durations: np.ndarray


def _check_feasible(t: int, n: int) -> None:
    if n < 1 or t < n:
        raise AlignmentError(f"cannot align {n} tokens to {t} frames")


def _shift(a: np.ndarray, fill: float) -> np.ndarray:
    out = np.empty_like(a)
    out[0] = fill
    out[1:] = a[:-1]
    return out


def _forward_backward(logp: np.ndarray) -> tuple[float, np.ndarray]:
    """Log partition over monotonic paths and per-cell posterior occupancy."""
    t_len, n = logp.shape
    alpha = np.full((t_len, n), -np.inf)
    alpha[0, 0] = logp[0, 0]
    for t in range(1, t_len):
        alpha[t] = np.logaddexp(alpha[t - 1], _shift(alpha[t - 1], -np.inf)) + logp[t]
    log_z = alpha[-1, -1]
    beta = np.full((t_len, n), -np.inf)
    beta[-1, -1] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1]
        adv = np.full(n, -np.inf)
        adv[:-1] = nxt[1:]
        beta[t] = np.logaddexp(nxt, adv)
    with np.errstate(invalid="ignore"):
        post = np.exp(alpha + beta - log_z)
    return float(log_z), np.nan_to_num(post)


def forward_sum_from_log(log_soft: Tensor) -> Tensor:
    """Forward-sum loss from log alignment probabilities ``[T, N]``."""
    t_len, n = log_soft.shape
    _check_feasible(t_len, n)
    logp = log_soft.data.astype(np.float64)
    log_z, post = _forward_backward(logp)
    dtype = log_soft.dtype

    def backward(g):
        return ((-g * post).astype(dtype),)

    return ad._make(np.asarray(-log_z, dtype=dtype), (log_soft,), backward, "forward_sum")


def forward_sum_loss(soft: Tensor) -> Tensor:
    """Forward-sum loss from row-stochastic alignment probabilities ``[T, N]``."""
    t_len, n = soft.shape
    _check_feasible(t_len, n)
    floor = np.finfo(np.float64).tiny
    sd = np.maximum(soft.data.astype(np.float64), floor)
    log_z, post = _forward_backward(np.log(sd))
    dtype = soft.dtype

    def backward(g):
        return ((-g * post / sd).astype(dtype),)

    return ad._make(np.asarray(-log_z, dtype=dtype), (soft,), backward, "forward_sum")


def best_path(soft) -> np.ndarray:
    """Token index per frame on the maximum-probability monotonic path."""
    soft = np.asarray(soft.data if isinstance(soft, Tensor) else soft, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return best_path_log(np.log(soft))


def best_path_log(logp: np.ndarray) -> np.ndarray:
    logp = np.asarray(logp, dtype=np.float64)
    t_len, n = logp.shape
    _check_feasible(t_len, n)
    score = np.full((t_len, n), -np.inf)
    advanced = np.zeros((t_len, n), dtype=bool)
    score[0, 0] = logp[0, 0]
    for t in range(1, t_len):
        stay = score[t - 1]
        adv = _shift(score[t - 1], -np.inf)
        # ties stay on the current token
        advanced[t] = adv > stay
        score[t] = np.where(advanced[t], adv, stay) + logp[t]
    path = np.empty(t_len, dtype=np.int64)
    n_cur = n - 1
    for t in range(t_len - 1, -1, -1):
        path[t] = n_cur
        if t > 0 and advanced[t, n_cur]:
            n_cur -= 1
    return path


def viterbi_durations(soft) -> np.ndarray:
    soft_arr = soft.data if isinstance(soft, Tensor) else np.asarray(soft)
    path = best_path(soft_arr)
    return np.bincount(path, minlength=soft_arr.shape[1]).astype(np.int64)


def _pairwise_neg_sq_dist(queries: Tensor, keys: Tensor) -> Tensor:
    t_len, a = queries.shape
    n = keys.shape[0]
    ones_an = Tensor(np.ones((a, n), dtype=queries.dtype))
    ones_ta = Tensor(np.ones((t_len, a), dtype=queries.dtype))
    q2 = ad.matmul(queries * queries, ones_an)
    k2 = ad.matmul(ones_ta, (keys * keys).T)
    cross = ad.matmul(queries, keys.T)
    return cross * 2.0 - q2 - k2


@lru_cache(maxsize=512)
def _beta_binomial_log_prior(t_len: int, n: int, scaling: float) -> np.ndarray:
    k = np.arange(n)
    rows = [betabinom(n - 1, scaling * (t + 1), scaling * (t_len - t)).logpmf(k) for t in range(t_len)]
    out = np.stack(rows)
    out.setflags(write=False)
    return out


def beta_binomial_log_prior(t_len: int, n: int, scaling: float = 1.0) -> np.ndarray:
    """Static near-diagonal prior: frame t favours token ``~ t * N / T``."""
    return _beta_binomial_log_prior(int(t_len), int(n), float(scaling))


def _alignment_logits(text_keys: Tensor, mel_queries: Tensor, log_prior) -> Tensor:
    if text_keys.shape[1] != mel_queries.shape[1]:
        raise DimensionError(f"key width {text_keys.shape[1]} != query width {mel_queries.shape[1]}")
    logits = _pairwise_neg_sq_dist(mel_queries, text_keys)
    if log_prior is not None:
        logits = logits + np.asarray(log_prior, dtype=logits.dtype)
    return logits


def soft_alignment(text_keys: Tensor, mel_queries: Tensor, log_prior=None) -> Tensor:
    return ad.softmax(_alignment_logits(text_keys, mel_queries, log_prior), axis=1)


def log_soft_alignment(text_keys: Tensor, mel_queries: Tensor, log_prior=None) -> Tensor:
    return ad.log_softmax(_alignment_logits(text_keys, mel_queries, log_prior), axis=1)


def duration_loss(predicted_log_dur: Tensor, target_dur) -> Tensor:
    target_dur = np.asarray(target_dur)
    if target_dur.shape != predicted_log_dur.shape:
        raise DimensionError(
            f"duration_loss: {predicted_log_dur.shape[0]} predictions for {len(target_dur)} targets"
        )
    return ad.mse(predicted_log_dur, np.log1p(target_dur.astype(np.float64)).astype(predicted_log_dur.dtype))


def durations_from_log(predicted_log_dur) -> np.ndarray:
    """Inference durations: ``round(expm1(x))`` clamped to at least one frame."""
    x = np.asarray(predicted_log_dur.data if isinstance(predicted_log_dur, Tensor) else predicted_log_dur)
    return np.maximum(np.rint(np.expm1(x.astype(np.float64))), 1).astype(np.int64)


class Aligner(Module):
    """Key/query conv encoders feeding ``soft_alignment``.

    With ``prior_scaling > 0`` a static beta-binomial prior is added to the
    alignment logits before the per-frame softmax.
    """

    def __init__(self, text_dim: int, mel_dim: int, attn_dim: int, rng, dtype=np.float32,
                 prior_scaling: float = 1.0):
        self.prior_scaling = prior_scaling
        self.key1 = Conv1d(text_dim, 2 * text_dim, 3, rng, dtype)
        self.key2 = Conv1d(2 * text_dim, attn_dim, 1, rng, dtype)
        self.query1 = Conv1d(mel_dim, 2 * mel_dim, 3, rng, dtype)
        self.query2 = Conv1d(2 * mel_dim, mel_dim, 1, rng, dtype)
        self.query3 = Conv1d(mel_dim, attn_dim, 1, rng, dtype)

    def keys(self, text: Tensor) -> Tensor:
        return self.key2(ad.gelu(self.key1(text)))

    def queries(self, mel: Tensor) -> Tensor:
        return self.query3(ad.gelu(self.query2(ad.gelu(self.query1(mel)))))

    def __call__(self, text: Tensor, mel: Tensor) -> AlignmentResult:
        keys, queries = self.keys(text), self.queries(mel)
        _check_feasible(queries.shape[0], keys.shape[0])
        prior = None
        if self.prior_scaling > 0:
            prior = beta_binomial_log_prior(queries.shape[0], keys.shape[0], self.prior_scaling)
        log_soft = log_soft_alignment(keys, queries, prior)
        soft = ad.exp(log_soft)
        loss = forward_sum_from_log(log_soft)
        path = best_path_log(log_soft.data)
        durations = np.bincount(path, minlength=keys.shape[0]).astype(np.int64)
        return AlignmentResult(soft=soft, loss_align=loss, durations=durations)
