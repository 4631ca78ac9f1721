"""Speaker linear probe, contour accuracy and ablation variants."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Utterance
from .model import CrossSpeechModel, ModelConfig
from .pitch import average_pitch, binarize_contour

ABLATION_FLAGS = ("no_mdsln", "no_sgr", "no_sip", "no_sdp", "no_residual")


class DegenerateLabelsError(ValueError):
    pass


class SpeakerProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression fitted by full-batch gradient descent.

    Features are standardised with training statistics. Weights start at zero,
    so the fit is deterministic and does not depend on sample order beyond
    floating-point summation order.
    """

    def __init__(self, learning_rate: float = 0.5, n_iter: int = 500, l2: float = 1e-3):
        self.learning_rate = learning_rate
        self.n_iter = n_iter
        self.l2 = l2

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise DegenerateLabelsError("the probe needs at least two distinct labels")
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.scale_[self.scale_ < 1e-12] = 1.0
        Z = (X - self.mean_) / self.scale_
        onehot = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        n, d = Z.shape
        W = np.zeros((d, len(self.classes_)))
        b = np.zeros(len(self.classes_))
        for _ in range(self.n_iter):
            P = _softmax(Z @ W + b)
            G = (P - onehot) / n
            W -= self.learning_rate * (Z.T @ G + self.l2 * W)
            b -= self.learning_rate * G.sum(axis=0)
        self.coef_, self.intercept_ = W, b
        return self

    def decision_function(self, X):
        check_is_fitted(self, ["coef_", "intercept_"])
        X = check_array(X, dtype=np.float64)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fold_assignment(labels, folds: int, seed: int = 0) -> np.ndarray:
    """Stratified fold ids: within each label, a seeded round-robin over a shuffle."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    ids = np.empty(len(labels), dtype=np.int64)
    for lab in np.unique(labels):
        where = np.flatnonzero(labels == lab)
        ids[rng.permutation(where)] = np.arange(len(where)) % folds
    return ids


def probe_predictions(representations, labels, fold_ids, probe: SpeakerProbe | None = None) -> np.ndarray:
    """Out-of-fold predictions for each sample."""
    X = np.asarray(representations, dtype=np.float64)
    y = np.asarray(labels)
    fold_ids = np.asarray(fold_ids)
    probe = probe or SpeakerProbe()
    pred = np.empty_like(y)
    for f in np.unique(fold_ids):
        test = fold_ids == f
        fitted = SpeakerProbe(**probe.get_params()).fit(X[~test], y[~test])
        pred[test] = fitted.predict(X[test])
    return pred


def speaker_probe(representations, labels, folds: int = 5, seed: int = 0, fold_ids=None) -> float:
    """k-fold cross-validated accuracy of a linear speaker classifier."""
    X = np.asarray(representations, dtype=np.float64)
    if X.ndim == 3:
        X = X.mean(axis=1)
    y = np.asarray(labels)
    n_classes = len(np.unique(y))
    if n_classes < 2:
        raise DegenerateLabelsError("speaker_probe needs at least two speakers")
    if fold_ids is None:
        if len(y) < folds * n_classes:
            raise ValueError(f"need at least folds*n_speakers={folds * n_classes} samples, got {len(y)}")
        fold_ids = fold_assignment(y, folds, seed)
    pred = probe_predictions(X, y, fold_ids)
    return float(np.mean(pred == y))


# -- model-level diagnostics ------------------------------------------------


@dataclass
class ProbeReport:
    probe_accuracy_h_si: float
    probe_accuracy_mel: float
    chance_level: float
    n_samples: int
    confusion_h_si: list
    confusion_mel: list
    contour_accuracy: float | None = None

    @property
    def gap(self) -> float:
        return self.probe_accuracy_mel - self.probe_accuracy_h_si

    def to_json(self) -> str:
        d = asdict(self)
        d["gap"] = self.gap
        return json.dumps(d, indent=1, sort_keys=True) + "\n"


def _confusion(y, pred, n: int) -> list:
    m = np.zeros((n, n), dtype=np.int64)
    for a, b in zip(y, pred):
        m[a, b] += 1
    return m.tolist()


def collect_probe_set(model: CrossSpeechModel, texts, n_speakers: int | None = None):
    """Run every text under every speaker.

    Returns mean-pooled projected ``h_si``, mean-pooled mel, and speaker labels.
    ``texts`` is a sequence of ``(token_ids, language_id)``.
    """
    n_speakers = n_speakers or model.config.n_speakers
    model.eval()
    h_si, mel, labels = [], [], []
    for tokens, lang in texts:
        for s in range(n_speakers):
            out = model.infer(tokens, s, lang)
            h_si.append(model.projected_h_si(out).mean(axis=0))
            mel.append(out.mel_pred.data.mean(axis=0))
            labels.append(s)
    return np.asarray(h_si), np.asarray(mel), np.asarray(labels)


def probe_texts(utterances: list[Utterance], per_language: int = 10):
    """First ``per_language`` distinct token strings of each language."""
    seen, counts, out = set(), {}, []
    for u in utterances:
        key = tuple(int(t) for t in u.token_ids)
        if key in seen or counts.get(u.language_id, 0) >= per_language:
            continue
        seen.add(key)
        counts[u.language_id] = counts.get(u.language_id, 0) + 1
        out.append((np.asarray(key), u.language_id))
    return out


def probe_report(model: CrossSpeechModel, utterances: list[Utterance], per_language: int = 10,
                 folds: int = 5, seed: int = 0) -> ProbeReport:
    h_si, mel, labels = collect_probe_set(model, probe_texts(utterances, per_language))
    return report_from_sets(h_si, mel, labels, model.config.n_speakers, folds, seed)


def report_from_sets(h_si, mel, labels, n_speakers: int, folds: int = 5, seed: int = 0) -> ProbeReport:
    ids = fold_assignment(labels, folds, seed)
    pred_h = probe_predictions(h_si, labels, ids)
    pred_m = probe_predictions(mel, labels, ids)
    return ProbeReport(
        probe_accuracy_h_si=float(np.mean(pred_h == labels)),
        probe_accuracy_mel=float(np.mean(pred_m == labels)),
        chance_level=1.0 / n_speakers,
        n_samples=len(labels),
        confusion_h_si=_confusion(labels, pred_h, n_speakers),
        confusion_mel=_confusion(labels, pred_m, n_speakers),
    )


def projection_csv(representations: dict, labels) -> str:
    """First two principal components per sample and representation, for external plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["representation", "speaker", "pc1", "pc2"])
    for name, reps in representations.items():
        X = np.asarray(reps, dtype=np.float64)
        Xc = X - X.mean(axis=0)
        _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        pcs = Xc @ vt[:2].T
        for lab, row in zip(labels, pcs):
            w.writerow([name, int(lab)] + [f"{v:.6g}" for v in row])
    return buf.getvalue()


def target_contour(model: CrossSpeechModel | None, u: Utterance) -> np.ndarray:
    if u.durations is not None:
        durations = u.durations
    else:
        from . import autodiff as ad

        with ad.no_grad():
            x = model.text_input(u.token_ids, u.language_id)
            res = model.aligner(x, ad.Tensor(np.asarray(u.mel, dtype=model.dtype)))
        durations = res.durations
    return binarize_contour(average_pitch(u.frame_pitch, durations))


def contour_agreement(logits, contour) -> float:
    return float(np.mean((np.asarray(logits) > 0).astype(np.int64) == np.asarray(contour)))


def contour_accuracy(model: CrossSpeechModel, held_out: list[Utterance]) -> float:
    """Fraction of token positions where the thresholded contour prediction is right."""
    model.eval()
    hits = total = 0
    for u in held_out:
        out = model.infer(u.token_ids, u.speaker_id, u.language_id)
        if out.sip_logits is None:
            raise ValueError("model has no contour predictor (no_sip ablation)")
        bits = (out.sip_logits.data > 0).astype(np.int64)
        target = target_contour(model, u)
        hits += int((bits == target).sum())
        total += len(target)
    return hits / total if total else float("nan")


def ablate(config: ModelConfig, flags=()) -> ModelConfig:
    flags = set(flags)
    unknown = flags - set(ABLATION_FLAGS)
    if unknown:
        raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
    changes = {}
    if "no_mdsln" in flags:
        changes["use_mdsln"] = False
    if "no_sgr" in flags:
        changes["lambda_sgr"] = 0.0
    if "no_sip" in flags:
        changes["use_sip"] = False
    if "no_sdp" in flags:
        changes["use_sdp"] = False
    if "no_residual" in flags:
        changes["use_residual"] = False
    return replace(config, **changes) if changes else config
