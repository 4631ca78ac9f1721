"""FastPitch-style building blocks on top of the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigurationError, DimensionError, Tensor

NEG_INF = -1e9


class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes with ``requires_grad=True``; child
    modules may be attributes or lists of modules. Iteration order follows
    attribute assignment order so parameter names are stable.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self.__dict__.items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise DimensionError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"parameter {name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)


def _param(array: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(array, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.weight = _param(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out)), dtype)
        self.bias = _param(np.zeros(n_out), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator, dtype=np.float32):
        if kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {kernel_size}")
        fan_in = c_in * kernel_size
        self.weight = _param(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (kernel_size, c_in, c_out)), dtype)
        self.bias = _param(np.zeros(c_out), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias)


class LayerNorm(Module):
    """Layer norm with its own learned gain and shift."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = _param(np.ones(dim), dtype)
        self.shift = _param(np.zeros(dim), dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.eps) * self.gain + self.shift


@dataclass
class FFTBlockParams:
    model_dim: int = 64
    n_heads: int = 2
    conv_kernel_size: int = 3
    conv_hidden_dim: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ConfigurationError(f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if self.conv_kernel_size % 2 == 0:
            raise ConfigurationError(f"conv_kernel_size must be odd, got {self.conv_kernel_size}")


def _mask_column(mask, length: int, dtype) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (length,):
        raise DimensionError(f"mask length {mask.shape} does not match sequence length {length}")
    return mask.astype(dtype)[:, None]


class FFTBlock(Module):
    """Pre-norm multi-head self-attention followed by a two-layer conv feed-forward.

    ``mask`` is a boolean vector over time with True at valid positions.
    Padded positions are excluded as attention keys and zeroed before every
    convolution, so a masked prefix reproduces the standalone computation.
    """

    def __init__(self, params: FFTBlockParams, rng: np.random.Generator, dtype=np.float32):
        d, hid, k = params.model_dim, params.conv_hidden_dim, params.conv_kernel_size
        self.params = params
        self.norm_attn = LayerNorm(d, dtype)
        self.qkv = Linear(d, 3 * d, rng, dtype)
        self.out = Linear(d, d, rng, dtype)
        self.norm_ff = LayerNorm(d, dtype)
        self.conv1 = Conv1d(d, hid, k, rng, dtype)
        self.conv2 = Conv1d(hid, d, k, rng, dtype)
        self.last_attention: np.ndarray | None = None

    def __call__(self, x: Tensor, mask=None, rng: np.random.Generator | None = None) -> Tensor:
        t, d = x.shape
        h = self.params.n_heads
        dh = d // h
        rate = self.params.dropout_rate
        train = self.training and rng is not None
        col = _mask_column(mask, t, x.dtype)

        y = self.norm_attn(x)
        qkv = self.qkv(y).reshape(t, 3, h, dh).transpose(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh))
        if col is not None:
            key_bias = np.where(col[:, 0] > 0, 0.0, NEG_INF).astype(x.dtype)
            scores = scores + np.broadcast_to(key_bias, (h, t, t))
        probs = ad.softmax(scores, axis=-1)
        self.last_attention = probs.data
        att = ad.matmul(probs, v).transpose(1, 0, 2).reshape(t, d)
        x = x + ad.dropout(self.out(att), rate, rng, train)
        if col is not None:
            x = x * col

        y = self.norm_ff(x)
        if col is not None:
            y = y * col
        y = ad.gelu(self.conv1(y))
        y = ad.dropout(y, rate, rng, train)
        if col is not None:
            y = y * col
        x = x + ad.dropout(self.conv2(y), rate, rng, train)
        if col is not None:
            x = x * col
        return x


class FFTStack(Module):
    """A stack of FFT blocks with a final layer norm."""

    def __init__(self, n_blocks: int, params: FFTBlockParams, rng: np.random.Generator, dtype=np.float32):
        self.blocks = [FFTBlock(params, rng, dtype) for _ in range(n_blocks)]
        self.norm = LayerNorm(params.model_dim, dtype)

    def __call__(self, x: Tensor, mask=None, rng=None) -> Tensor:
        for block in self.blocks:
            x = block(x, mask, rng)
        return self.norm(x)


def fft_block(x: Tensor, block: FFTBlock, mask=None, rng=None) -> Tensor:
    return block(x, mask, rng)


def positional_encoding(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Interleaved sinusoid table: even channels sine, odd channels cosine."""
    if dim % 2:
        raise ConfigurationError(f"positional encoding needs an even dimension, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 1.0 / (10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table.astype(dtype)


def expand_index(durations) -> np.ndarray:
    durations = np.asarray(durations, dtype=np.int64)
    if durations.ndim != 1:
        raise DimensionError(f"durations must be 1-d, got shape {durations.shape}")
    if (durations < 0).any():
        raise ValueError(f"durations must be nonnegative: {durations.tolist()}")
    if durations.sum() == 0:
        raise ValueError("all durations are zero: length regulation would produce an empty sequence")
    return np.repeat(np.arange(len(durations)), durations)


def length_regulate(h: Tensor, durations) -> Tensor:
    """Repeat row n of ``h`` ``durations[n]`` times."""
    durations = np.asarray(durations)
    if len(durations) != h.shape[0]:
        raise DimensionError(f"{len(durations)} durations for {h.shape[0]} tokens")
    return ad.gather_rows(h, expand_index(durations))


class EmbeddingTables(Module):
    def __init__(self, n_tokens: int, n_speakers: int, n_languages: int, dim: int, rng, dtype=np.float32):
        self.tokens = _param(rng.normal(0.0, 1.0, (n_tokens, dim)) * 0.3, dtype)
        self.speakers = _param(rng.normal(0.0, 1.0, (n_speakers, dim)) * 0.3, dtype)
        self.languages = _param(rng.normal(0.0, 1.0, (n_languages, dim)) * 0.3, dtype)

    def token(self, ids) -> Tensor:
        return ad.embedding_lookup(self.tokens, ids)

    def speaker(self, ids) -> Tensor:
        return ad.embedding_lookup(self.speakers, np.atleast_1d(ids))

    def language(self, ids) -> Tensor:
        return ad.embedding_lookup(self.languages, np.atleast_1d(ids))
