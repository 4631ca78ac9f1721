"""Cross-lingual TTS acoustic model with speaker-independent and speaker-dependent generators."""

__version__ = "0.1.0"

from .data import ToyCorpusSpec, Utterance, generate_corpus, load_corpus, save_corpus
from .diagnostics import SpeakerProbe, ablate, contour_accuracy, probe_report, speaker_probe
from .estimator import CrossSpeech
from .model import CrossSpeechModel, LossBreakdown, ModelConfig
from .trainer import TrainConfig, Trainer, load_checkpoint, save_checkpoint, train

__all__ = [
    "CrossSpeech",
    "CrossSpeechModel",
    "LossBreakdown",
    "ModelConfig",
    "SpeakerProbe",
    "ToyCorpusSpec",
    "TrainConfig",
    "Trainer",
    "Utterance",
    "ablate",
    "contour_accuracy",
    "generate_corpus",
    "load_checkpoint",
    "load_corpus",
    "probe_report",
    "save_checkpoint",
    "save_corpus",
    "speaker_probe",
    "train",
]
