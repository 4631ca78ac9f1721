import json

import numpy as np
import pytest

from xspeech.autodiff import ConfigurationError
from xspeech.data import (
    CorpusFormatError,
    ToyCorpusSpec,
    generate_corpus,
    load_corpus,
    load_corpus_spec,
    save_corpus,
    synthesis_components,
)
from xspeech.pitch import average_pitch, binarize_contour
from xspeech.xtsr import XTSRFormatError

SMALL = ToyCorpusSpec(utterances_per_speaker=5)


def same(a, b):
    return (np.array_equal(a.token_ids, b.token_ids) and a.language_id == b.language_id
            and a.speaker_id == b.speaker_id and np.array_equal(a.mel, b.mel)
            and np.array_equal(a.frame_pitch, b.frame_pitch))


class TestGeneration:
    def test_deterministic(self):
        a, b = generate_corpus(SMALL), generate_corpus(SMALL)
        assert all(same(x, y) for x, y in zip(a, b))

    def test_streams_differ(self):
        a, b = generate_corpus(SMALL, stream=1), generate_corpus(SMALL, stream=2)
        assert not all(same(x, y) for x, y in zip(a, b))

    def test_utterance_invariants(self):
        spec = SMALL
        for u in generate_corpus(spec):
            assert u.mel.shape == (u.n_frames, 80) and u.mel.dtype == np.float32
            assert len(u.frame_pitch) == u.n_frames >= u.n_tokens
            assert u.durations.sum() == u.n_frames

    def test_speaker_language_map_is_a_function(self):
        seen = {}
        for u in generate_corpus(SMALL):
            assert seen.setdefault(u.speaker_id, u.language_id) == u.language_id
            assert set(u.token_ids) <= set(SMALL.language_tokens(u.language_id))
        assert len(seen) == 6

    def test_no_immediate_token_repeats(self):
        for u in generate_corpus(SMALL):
            assert np.all(np.diff(u.token_ids) != 0)

    @pytest.mark.parametrize("kwargs", [
        {"n_languages": 0}, {"tokens_per_language": 1}, {"frames_per_token": (3, 2)},
        {"tokens_per_utterance": (0, 4)}, {"mel_noise_std": -1.0}, {"n_mel_bins": 0},
    ])
    def test_bad_spec(self, kwargs):
        with pytest.raises(ConfigurationError):
            ToyCorpusSpec(**kwargs)

    def test_token_template_recoverable_by_averaging(self):
        spec = ToyCorpusSpec(utterances_per_speaker=60)
        comp = synthesis_components(spec)
        tok = 3
        frames, owners = [], []
        for u in generate_corpus(spec):
            hit = np.repeat(u.token_ids, u.durations) == tok
            frames.append(u.mel[hit] - u.frame_pitch[hit, None] * comp.pitch_pattern)
            owners += [u.speaker_id] * int(hit.sum())
        frames = np.concatenate(frames)
        # template plus the frame-weighted mean signature of the speakers who said it
        expected = comp.token_templates[tok] + comp.speaker_signatures[owners].mean(0)
        assert len(frames) >= 100
        assert np.abs(frames.mean(0) - expected).max() < 0.05

    def test_contour_is_text_determined(self):
        spec = ToyCorpusSpec()
        comp = synthesis_components(spec)
        from xspeech.data import synthesize_utterance
        agree = total = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            tokens = spec.language_tokens(0)[rng.permutation(12)[:8]]
            a = synthesize_utterance(spec, comp, rng, 0, tokens)
            b = synthesize_utterance(spec, comp, rng, 1, tokens)
            bits_a = binarize_contour(average_pitch(a.frame_pitch, a.durations))
            bits_b = binarize_contour(average_pitch(b.frame_pitch, b.durations))
            agree += int((bits_a == bits_b).sum())
            total += len(bits_a)
        assert agree / total >= 0.95


class TestFileIO:
    def test_round_trip_bit_identical(self, tmp_path):
        corpus = generate_corpus(SMALL)
        save_corpus(tmp_path, corpus, SMALL)
        back = load_corpus(tmp_path)
        assert len(back) == len(corpus)
        assert all(same(a, b) and np.array_equal(a.durations, b.durations) for a, b in zip(corpus, back))
        assert load_corpus_spec(tmp_path) == SMALL

    def test_manifest_records_offsets_and_audio_metadata(self, tmp_path):
        corpus = generate_corpus(SMALL)[:3]
        save_corpus(tmp_path, corpus, SMALL)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        offsets = [e["frame_offset"] for e in manifest["utterances"]]
        assert offsets == [0, corpus[0].n_frames, corpus[0].n_frames + corpus[1].n_frames]
        assert manifest["audio"]["hop_length"] == 256

    def test_empty_corpus(self, tmp_path):
        save_corpus(tmp_path, [], SMALL)
        assert load_corpus(tmp_path) == []

    def test_truncated_archive(self, tmp_path):
        save_corpus(tmp_path, generate_corpus(SMALL)[:2], SMALL)
        data = (tmp_path / "mel.xtsr").read_bytes()
        (tmp_path / "mel.xtsr").write_bytes(data[: len(data) // 2])
        with pytest.raises(XTSRFormatError):
            load_corpus(tmp_path)

    def test_corrupt_magic_reports_offset(self, tmp_path):
        save_corpus(tmp_path, generate_corpus(SMALL)[:2], SMALL)
        data = bytearray((tmp_path / "pitch.xtsr").read_bytes())
        data[:4] = b"JUNK"
        (tmp_path / "pitch.xtsr").write_bytes(bytes(data))
        with pytest.raises(XTSRFormatError) as err:
            load_corpus(tmp_path)
        assert err.value.offset == 0

    def test_wrong_manifest_version(self, tmp_path):
        save_corpus(tmp_path, [], SMALL)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["version"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CorpusFormatError, match="version"):
            load_corpus(tmp_path)

    def test_corrupt_manifest(self, tmp_path):
        save_corpus(tmp_path, [], SMALL)
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(CorpusFormatError, match="offset"):
            load_corpus(tmp_path)
