"""Central finite-difference gradient checking in float64."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@contextmanager
def frozen_stop_gradients():
    """Replay the values of stop-gradient points seen on the first evaluation.

    The tape differentiates a surrogate in which every stopped value is a
    constant. Finite differences only match that surrogate if perturbed
    evaluations reuse the unperturbed stopped values. The first pass inside
    the context records them in call order; the yielded ``replay`` callable
    rewinds to the start and must be called before each perturbed evaluation.
    """
    original = ad.stop_gradient
    recorded: list[np.ndarray] = []
    state = {"cursor": None}

    def patched(x: Tensor) -> Tensor:
        if state["cursor"] is None:
            recorded.append(x.data.copy())
            return original(x)
        value = recorded[state["cursor"]]
        state["cursor"] += 1
        return Tensor(value)

    def replay() -> None:
        state["cursor"] = 0

    ad.stop_gradient = patched
    try:
        yield replay
    finally:
        ad.stop_gradient = original


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-3,
                       before_eval: Callable[[], None] = lambda: None) -> np.ndarray:
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        before_eval()
        up = float(fn().data)
        flat[i] = orig - step
        before_eval()
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-3
) -> float:
    """Worst norm-wise relative error between tape and finite-difference gradients.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    scalar. Inputs should be float64 leaves with ``requires_grad=True``.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("gradient checks must run in float64")
        x.grad = None
    worst = 0.0
    with frozen_stop_gradients() as replay:
        fn().backward()
        for x in inputs:
            analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
            numeric = numerical_gradient(fn, x, step, replay)
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_directional(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
    n_directions: int = 3, step: float = 1e-3,
) -> float:
    """Worst relative error between ``grad . v`` and a central difference along ``v``.

    Suited to graphs with too many parameters for per-coordinate checks; each
    direction costs two forward passes.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("gradient checks must run in float64")
        x.grad = None
    with frozen_stop_gradients() as replay:
        return _directional(fn, inputs, rng, n_directions, step, replay)


def _directional(fn, inputs, rng, n_directions, step, replay) -> float:
    fn().backward()
    grads = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]
    originals = [x.data.copy() for x in inputs]
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(x.shape) for x in inputs]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        values = []
        for sign in (1.0, -1.0):
            for x, d, orig in zip(inputs, dirs, originals):
                x.data = orig + sign * step * d
            replay()
            values.append(float(fn().data))
        for x, orig in zip(inputs, originals):
            x.data = orig.copy()
        numeric = (values[0] - values[1]) / (2 * step)
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        denom = max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
