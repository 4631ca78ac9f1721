"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np

from .data import Utterance


def check_token_ids(tokens, n_tokens: int | None = None) -> np.ndarray:
    arr = np.asarray(tokens)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"expected a non-empty 1-d token id sequence, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("token ids must be integers")
    arr = arr.astype(np.int64)
    if arr.min() < 0 or (n_tokens is not None and arr.max() >= n_tokens):
        raise ValueError(f"token ids must lie in [0, {n_tokens})")
    return arr


def check_utterance(u: Utterance) -> Utterance:
    if not isinstance(u, Utterance):
        raise TypeError(f"expected Utterance, got {type(u).__name__}")
    check_token_ids(u.token_ids)
    if u.mel is None or np.asarray(u.mel).ndim != 2:
        raise ValueError("utterance mel must be a [frames, bins] array")
    if u.frame_pitch is None or len(u.frame_pitch) != u.mel.shape[0]:
        raise ValueError("frame pitch length must equal the mel frame count")
    if u.mel.shape[0] < len(u.token_ids):
        raise ValueError(f"{u.mel.shape[0]} frames cannot cover {len(u.token_ids)} tokens")
    if not np.isfinite(u.mel).all() or not np.isfinite(u.frame_pitch).all():
        raise ValueError("utterance contains non-finite values")
    return u


def check_corpus(corpus) -> list[Utterance]:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    for u in corpus:
        check_utterance(u)
    bins = {u.mel.shape[1] for u in corpus}
    if len(bins) != 1:
        raise ValueError(f"inconsistent mel bin counts: {sorted(bins)}")
    return corpus
