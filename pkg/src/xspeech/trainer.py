"""Adam-family optimisation loop with a Noam learning-rate schedule."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import xtsr
from .autodiff import ConfigurationError
from .data import Utterance
from .model import LOSS_TERMS, CrossSpeechModel, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
CSV_COLUMNS = ("step",) + LOSS_TERMS + ("total",)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, step: int, value: float):
        super().__init__(f"loss term {term!r} is {value} at step {step}")
        self.term = term
        self.step = step


class CheckpointVersionError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_steps: int = 100
    total_steps: int = 1500
    lr_scale: float = 0.02
    grad_clip_norm: float = 1.0
    lamb: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("betas must lie in (0, 1)")
        if self.warmup_steps < 1:
            raise ConfigurationError("warmup_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.total_steps < 0 or self.lr_scale < 0 or self.eps <= 0:
            raise ConfigurationError("total_steps, lr_scale must be >= 0 and eps > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {unknown}")
        return cls(**d)


def noam_lr(step: int, warmup: int, scale: float) -> float:
    """``scale * min(step^-0.5, step * warmup^-1.5)`` for ``step >= 1``."""
    step = max(step, 1)
    return scale * min(step ** -0.5, step * warmup ** -1.5)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads:
            g *= g.dtype.type(factor)
    return total


class Adam:
    """Adam with an optional per-tensor LAMB trust ratio."""

    def __init__(self, params, beta1=0.9, beta2=0.98, eps=1e-9, lamb=False):
        self.params = list(params)
        self.beta1, self.beta2, self.eps, self.lamb = beta1, beta2, eps, lamb
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            dt = p.dtype.type
            m *= dt(b1)
            m += dt(1 - b1) * g
            v *= dt(b2)
            v += dt(1 - b2) * g * g
            update = (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))
            scale = lr
            if self.lamb:
                wn, un = float(np.linalg.norm(p.data)), float(np.linalg.norm(update))
                if wn > 0 and un > 0:
                    scale = lr * wn / un
            p.data = p.data - dt(scale) * update


def batch_indices(n_items: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Indices of the batch used at 0-based ``step``: shuffled epochs of consecutive slices."""
    per_epoch = max(1, math.ceil(n_items / batch_size))
    epoch, slot = divmod(step, per_epoch)
    order = np.random.default_rng([seed, 1000 + epoch]).permutation(n_items)
    return order[slot * batch_size : (slot + 1) * batch_size]


class Trainer:
    """Holds the model, optimiser moments, RNG and loss history for one run."""

    def __init__(self, corpus: list[Utterance], model_config: ModelConfig, train_config: TrainConfig,
                 model: CrossSpeechModel | None = None):
        if not corpus:
            raise ValueError("cannot train on an empty corpus")
        self.corpus = corpus
        self.model_config = model_config
        self.config = train_config
        self.model = model if model is not None else CrossSpeechModel(model_config)
        self.model.train()
        names_params = list(self.model.named_parameters())
        self.param_names = [n for n, _ in names_params]
        self.optimizer = Adam([p for _, p in names_params], train_config.beta1, train_config.beta2,
                              train_config.eps, train_config.lamb)
        self.rng = np.random.default_rng([train_config.seed, 2])
        self.step = 0
        self.history: list[dict[str, float]] = []

    def train_step(self) -> dict[str, float]:
        cfg = self.config
        idx = batch_indices(len(self.corpus), cfg.batch_size, self.step, cfg.seed)
        batch = [self.corpus[i] for i in idx]
        self.model.zero_grad()
        _, losses = self.model.forward_train(batch, self.rng)
        values = losses.as_floats()
        for term in LOSS_TERMS + ("total",):
            if not math.isfinite(values[term]):
                raise NonFiniteLossError(term, self.step + 1, values[term])
        losses.total.backward()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.optimizer.params]
        for p, g in zip(self.optimizer.params, grads):
            p.grad = g
        clip_grad_norm(grads, cfg.grad_clip_norm)
        self.step += 1
        self.optimizer.step(noam_lr(self.step, cfg.warmup_steps, cfg.lr_scale))
        record = {"step": self.step, **values}
        self.history.append(record)
        return record

    def run(self, n_steps: int | None = None, log_every: int = 50) -> list[dict[str, float]]:
        n_steps = self.config.total_steps if n_steps is None else n_steps
        for _ in range(n_steps):
            rec = self.train_step()
            if log_every and rec["step"] % log_every == 0:
                log.info("step %d total %.4f rec %.4f align %.4f", rec["step"], rec["total"], rec["rec"], rec["align"])
        return self.history

    # -- checkpoints ----------------------------------------------------------
    def save_checkpoint(self, path) -> None:
        save_checkpoint(path, self)

    @classmethod
    def from_checkpoint(cls, path, corpus: list[Utterance]) -> "Trainer":
        return load_checkpoint(path, corpus)


def train(corpus: list[Utterance], model_config: ModelConfig, train_config: TrainConfig):
    trainer = Trainer(corpus, model_config, train_config)
    history = trainer.run()
    return trainer.model, history


def history_csv(history: list[dict[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in history:
        writer.writerow([rec["step"]] + [repr(float(rec[k])) for k in CSV_COLUMNS[1:]])
    return buf.getvalue()


def read_history_csv(text: str) -> list[dict[str, float]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: (int(r[k]) if k == "step" else float(r[k])) for k in CSV_COLUMNS} for r in rows]


def save_checkpoint(path, trainer: Trainer) -> None:
    """Directory with ``params.xtsr``, ``adam_m.xtsr``, ``adam_v.xtsr``,
    ``manifest.json`` and ``loss.csv``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = trainer.optimizer.params
    xtsr.save_archive(path / "params.xtsr", [p.data for p in params])
    xtsr.save_archive(path / "adam_m.xtsr", trainer.optimizer.m)
    xtsr.save_archive(path / "adam_v.xtsr", trainer.optimizer.v)
    manifest = {
        "format": "xspeech-checkpoint",
        "version": CHECKPOINT_FORMAT_VERSION,
        "step": trainer.step,
        "optimizer_t": trainer.optimizer.t,
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in zip(trainer.param_names, params)],
        "model_config": trainer.model_config.to_dict(),
        "train_config": trainer.config.to_dict(),
        "rng_state": trainer.rng.bit_generator.state,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (path / "loss.csv").write_text(history_csv(trainer.history))


def _read_manifest(path: Path) -> dict:
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "xspeech-checkpoint" or manifest.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"incompatible checkpoint: format {manifest.get('format')!r} version {manifest.get('version')!r}, "
            f"expected version {CHECKPOINT_FORMAT_VERSION}"
        )
    return manifest


def load_model(path, model_config: ModelConfig | None = None) -> CrossSpeechModel:
    """Model weights only, in eval mode."""
    path = Path(path)
    manifest = _read_manifest(path)
    config = model_config or ModelConfig.from_dict(manifest["model_config"])
    model = CrossSpeechModel(config)
    names = [e["name"] for e in manifest["parameters"]]
    arrays = xtsr.load_archive(path / "params.xtsr")
    model.load_state_dict(dict(zip(names, arrays)))
    return model.eval()


def load_checkpoint(path, corpus: list[Utterance], model_config: ModelConfig | None = None) -> Trainer:
    path = Path(path)
    manifest = _read_manifest(path)
    mconf = model_config or ModelConfig.from_dict(manifest["model_config"])
    tconf = TrainConfig.from_dict(manifest["train_config"])
    trainer = Trainer(corpus, mconf, tconf)
    names = [e["name"] for e in manifest["parameters"]]
    trainer.model.load_state_dict(dict(zip(names, xtsr.load_archive(path / "params.xtsr"))))
    by_name = dict(zip(names, range(len(names))))
    m_arrays = xtsr.load_archive(path / "adam_m.xtsr")
    v_arrays = xtsr.load_archive(path / "adam_v.xtsr")
    for i, name in enumerate(trainer.param_names):
        j = by_name[name]
        trainer.optimizer.m[i] = m_arrays[j].copy()
        trainer.optimizer.v[i] = v_arrays[j].copy()
    trainer.optimizer.t = manifest["optimizer_t"]
    trainer.step = manifest["step"]
    trainer.rng.bit_generator.state = manifest["rng_state"]
    trainer.history = read_history_csv((path / "loss.csv").read_text())
    return trainer
