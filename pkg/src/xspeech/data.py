"""Synthetic multilingual toy corpus.

Each speaker speaks exactly one language, and each language owns a disjoint
slice of the token vocabulary, so speaker and language are confounded just as
in a real monolingual-per-speaker training set.

Mel frames are built from three additive parts: a per-token spectral template
(all languages draw templates from the same family of shapes), a per-speaker
signature (channel offset plus spectral tilt), and a pitch-dependent spectral
bump. Frame pitch is the speaker's base pitch plus a per-token level and a
zero-mean ramp inside each token, so the rise/fall pattern between tokens is
fixed by the text alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import xtsr
from .autodiff import ConfigurationError

CORPUS_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
# front-end parameters of the real-audio setup; carried as metadata only
AUDIO_METADATA = {"sample_rate": 22050, "win_length": 1024, "hop_length": 256, "n_fft": 1024}


class CorpusFormatError(ValueError):
    pass


@dataclass
class Utterance:
    token_ids: np.ndarray
    language_id: int
    speaker_id: int
    mel: np.ndarray
    frame_pitch: np.ndarray
    durations: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]

    @property
    def n_tokens(self) -> int:
        return len(self.token_ids)


@dataclass
class ToyCorpusSpec:
    n_languages: int = 3
    speakers_per_language: int = 2
    tokens_per_language: int = 12
    utterances_per_speaker: int = 40
    tokens_per_utterance: tuple[int, int] = (4, 10)
    frames_per_token: tuple[int, int] = (2, 6)
    n_mel_bins: int = 80
    mel_noise_std: float = 0.1
    pitch_noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.tokens_per_utterance = tuple(int(v) for v in self.tokens_per_utterance)
        self.frames_per_token = tuple(int(v) for v in self.frames_per_token)
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.n_languages < 1:
            problems.append("n_languages must be >= 1")
        if self.speakers_per_language < 1:
            problems.append("speakers_per_language must be >= 1")
        if self.tokens_per_language < 2:
            problems.append("tokens_per_language must be >= 2")
        if self.utterances_per_speaker < 0:
            problems.append("utterances_per_speaker must be >= 0")
        lo, hi = self.tokens_per_utterance
        if not 1 <= lo <= hi:
            problems.append(f"bad tokens_per_utterance range {self.tokens_per_utterance}")
        lo, hi = self.frames_per_token
        if not 1 <= lo <= hi:
            problems.append(f"bad frames_per_token range {self.frames_per_token}")
        if self.n_mel_bins < 1:
            problems.append("n_mel_bins must be >= 1")
        if self.mel_noise_std < 0 or self.pitch_noise_std < 0:
            problems.append("noise levels must be nonnegative")
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def n_speakers(self) -> int:
        return self.n_languages * self.speakers_per_language

    @property
    def n_tokens(self) -> int:
        return self.n_languages * self.tokens_per_language

    def speaker_language(self, speaker_id: int) -> int:
        return speaker_id // self.speakers_per_language

    def language_tokens(self, language_id: int) -> np.ndarray:
        start = language_id * self.tokens_per_language
        return np.arange(start, start + self.tokens_per_language)


@dataclass
class SynthesisComponents:
    token_templates: np.ndarray  # [n_tokens, bins]
    token_levels: np.ndarray  # [n_tokens]
    speaker_signatures: np.ndarray  # [n_speakers, bins]
    speaker_base_pitch: np.ndarray  # [n_speakers]
    pitch_pattern: np.ndarray  # [bins]
    extra: dict = field(default_factory=dict)


def synthesis_components(spec: ToyCorpusSpec) -> SynthesisComponents:
    rng = np.random.default_rng([spec.seed, 0])
    bins = np.arange(spec.n_mel_bins, dtype=np.float64)
    width = max(spec.n_mel_bins / 16.0, 1.0)

    templates = np.zeros((spec.n_tokens, spec.n_mel_bins))
    for tok in range(spec.n_tokens):
        centers = rng.uniform(0, spec.n_mel_bins, size=2)
        amps = rng.uniform(0.8, 1.6, size=2) * rng.choice([-1.0, 1.0], size=2)
        for c, a in zip(centers, amps):
            templates[tok] += a * np.exp(-0.5 * ((bins - c) / width) ** 2)
        templates[tok] += 0.2 * rng.normal(size=spec.n_mel_bins)

    levels = np.zeros(spec.n_tokens)
    grid = np.linspace(-1.0, 1.0, spec.tokens_per_language)
    for lang in range(spec.n_languages):
        levels[spec.language_tokens(lang)] = rng.permutation(grid)

    ramp = np.linspace(-1.0, 1.0, spec.n_mel_bins)
    signatures = np.zeros((spec.n_speakers, spec.n_mel_bins))
    for s in range(spec.n_speakers):
        offset = 0.5 * rng.normal(size=spec.n_mel_bins)
        tilt = rng.uniform(-0.6, 0.6)
        signatures[s] = offset + tilt * ramp
    base = rng.permutation(np.linspace(-1.0, 1.0, spec.n_speakers)) if spec.n_speakers > 1 else np.zeros(1)

    pattern = 0.3 * np.exp(-0.5 * ((bins - spec.n_mel_bins / 3.0) / (2 * width)) ** 2)
    return SynthesisComponents(templates, levels, signatures, base, pattern)


def _token_string(rng: np.random.Generator, vocab: np.ndarray, length: int) -> np.ndarray:
    # no immediate repeats, so every adjacent pair is a genuine rise or fall
    out = [rng.choice(vocab)]
    for _ in range(length - 1):
        choices = vocab[vocab != out[-1]]
        out.append(rng.choice(choices))
    return np.asarray(out, dtype=np.int64)


def synthesize_utterance(spec: ToyCorpusSpec, comp: SynthesisComponents, rng: np.random.Generator,
                         speaker_id: int, token_ids: np.ndarray | None = None) -> Utterance:
    lang = spec.speaker_language(speaker_id)
    if token_ids is None:
        n = rng.integers(spec.tokens_per_utterance[0], spec.tokens_per_utterance[1] + 1)
        token_ids = _token_string(rng, spec.language_tokens(lang), int(n))
    token_ids = np.asarray(token_ids, dtype=np.int64)
    durations = rng.integers(spec.frames_per_token[0], spec.frames_per_token[1] + 1, size=len(token_ids))
    frames = np.repeat(np.arange(len(token_ids)), durations)

    pitch = np.empty(len(frames))
    start = 0
    for tok, d in zip(token_ids, durations):
        ramp = np.linspace(-0.1, 0.1, d) if d > 1 else np.zeros(1)
        pitch[start : start + d] = comp.speaker_base_pitch[speaker_id] + comp.token_levels[tok] + ramp
        start += d
    pitch += spec.pitch_noise_std * rng.normal(size=len(frames))

    mel = (
        comp.token_templates[token_ids[frames]]
        + comp.speaker_signatures[speaker_id]
        + pitch[:, None] * comp.pitch_pattern
        + spec.mel_noise_std * rng.normal(size=(len(frames), spec.n_mel_bins))
    )
    return Utterance(
        token_ids=token_ids,
        language_id=lang,
        speaker_id=speaker_id,
        mel=mel.astype(np.float32),
        frame_pitch=pitch.astype(np.float32),
        durations=durations.astype(np.int64),
    )


def generate_corpus(spec: ToyCorpusSpec, stream: int = 1) -> list[Utterance]:
    """Deterministic corpus for ``spec``; ``stream`` selects an independent draw
    of utterances over the same speakers and templates (use 2 for held-out)."""
    comp = synthesis_components(spec)
    rng = np.random.default_rng([spec.seed, stream])
    out = []
    for s in range(spec.n_speakers):
        for _ in range(spec.utterances_per_speaker):
            out.append(synthesize_utterance(spec, comp, rng, s))
    return out


# -- file I/O ---------------------------------------------------------------


def save_corpus(path, utterances: list[Utterance], spec: ToyCorpusSpec | None = None) -> None:
    """Write ``manifest.json`` plus ``mel.xtsr`` and ``pitch.xtsr``.

    The two archives each hold one tensor: all utterances' frames stacked in
    manifest order. Each manifest entry records its ``frame_offset`` and
    ``n_frames`` into those stacks.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n_bins = utterances[0].mel.shape[1] if utterances else (spec.n_mel_bins if spec else 80)
    entries, offset = [], 0
    for u in utterances:
        entries.append({
            "token_ids": [int(t) for t in u.token_ids],
            "language_id": int(u.language_id),
            "speaker_id": int(u.speaker_id),
            "n_frames": int(u.n_frames),
            "frame_offset": offset,
            "durations": None if u.durations is None else [int(d) for d in u.durations],
        })
        offset += u.n_frames
    mel = np.concatenate([u.mel for u in utterances]) if utterances else np.zeros((0, n_bins), np.float32)
    pitch = np.concatenate([u.frame_pitch for u in utterances]) if utterances else np.zeros(0, np.float32)
    manifest = {
        "format": "xspeech-corpus",
        "version": CORPUS_FORMAT_VERSION,
        "fields": ["mel.xtsr", "pitch.xtsr"],
        "n_mel_bins": int(n_bins),
        "audio": AUDIO_METADATA,
        "spec": None if spec is None else asdict(spec),
        "utterances": entries,
    }
    xtsr.save(path / "mel.xtsr", mel.astype(np.float32))
    xtsr.save(path / "pitch.xtsr", pitch.astype(np.float32))
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_corpus(path) -> list[Utterance]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST_NAME).read_text())
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"corrupt manifest at byte offset {exc.pos}: {exc.msg}") from exc
    if manifest.get("format") != "xspeech-corpus" or manifest.get("version") != CORPUS_FORMAT_VERSION:
        raise CorpusFormatError(
            f"unsupported corpus format {manifest.get('format')!r} version {manifest.get('version')!r}"
        )
    mel = xtsr.load(path / "mel.xtsr")
    pitch = xtsr.load(path / "pitch.xtsr")
    if mel.ndim != 2 or pitch.ndim != 1 or mel.shape[0] != pitch.shape[0]:
        raise CorpusFormatError(f"mel {mel.shape} and pitch {pitch.shape} stacks disagree")
    out = []
    for i, e in enumerate(manifest["utterances"]):
        lo, n = e["frame_offset"], e["n_frames"]
        if lo < 0 or lo + n > mel.shape[0]:
            raise CorpusFormatError(f"utterance {i} frames [{lo}, {lo + n}) exceed stack of {mel.shape[0]}")
        out.append(Utterance(
            token_ids=np.asarray(e["token_ids"], dtype=np.int64),
            language_id=int(e["language_id"]),
            speaker_id=int(e["speaker_id"]),
            mel=mel[lo : lo + n].copy(),
            frame_pitch=pitch[lo : lo + n].copy(),
            durations=None if e.get("durations") is None else np.asarray(e["durations"], dtype=np.int64),
        ))
    return out


def load_corpus_spec(path) -> ToyCorpusSpec | None:
    manifest = json.loads((Path(path) / MANIFEST_NAME).read_text())
    return None if manifest.get("spec") is None else ToyCorpusSpec(**manifest["spec"])
