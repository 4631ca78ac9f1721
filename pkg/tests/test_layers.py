import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xspeech.autodiff import ConfigurationError, DimensionError, Tensor
from xspeech.gradcheck import check_gradients
from xspeech.layers import (
    Conv1d,
    EmbeddingTables,
    FFTBlock,
    FFTBlockParams,
    FFTStack,
    LayerNorm,
    Linear,
    expand_index,
    length_regulate,
    positional_encoding,
)
from xspeech.pitch import average_pitch

from conftest import leaf

TINY = FFTBlockParams(model_dim=8, n_heads=2, conv_kernel_size=3, conv_hidden_dim=16, dropout_rate=0.1)


def tiny_block(seed=0):
    return FFTBlock(TINY, np.random.default_rng(seed), dtype=np.float64).eval()


class TestFFTBlock:
    def test_masked_prefix_matches_standalone(self, rng):
        block = tiny_block()
        for _ in range(10):
            n_valid, n_pad = rng.integers(2, 7), rng.integers(1, 5)
            prefix = rng.normal(size=(n_valid, 8))
            padded = np.concatenate([prefix, rng.normal(size=(n_pad, 8))])
            mask = np.arange(n_valid + n_pad) < n_valid
            alone = block(Tensor(prefix)).data
            masked = block(Tensor(padded), mask).data
            np.testing.assert_allclose(masked[:n_valid], alone, rtol=1e-10, atol=1e-12)
            assert np.all(masked[n_valid:] == 0)

    def test_padded_keys_get_no_attention(self, rng):
        block = tiny_block()
        mask = np.array([True, True, True, False, False])
        block(Tensor(rng.normal(size=(5, 8))), mask)
        assert np.all(block.last_attention[:, :, 3:] < 1e-12)

    def test_eval_is_deterministic(self, rng):
        block = tiny_block()
        x = Tensor(rng.normal(size=(6, 8)))
        assert np.array_equal(block(x, rng=np.random.default_rng(1)).data, block(x, rng=np.random.default_rng(2)).data)

    def test_dropout_only_in_training(self, rng):
        block = tiny_block().train()
        x = Tensor(rng.normal(size=(6, 8)))
        a = block(x, rng=np.random.default_rng(1)).data
        b = block(x, rng=np.random.default_rng(2)).data
        assert not np.array_equal(a, b)

    def test_gradient_wrt_input_and_parameters(self, rng):
        stack = FFTStack(1, TINY, np.random.default_rng(3), dtype=np.float64).eval()
        for _ in range(20):
            x = leaf(rng.normal(size=(5, 8)))
            probe = rng.normal(size=(5, 8))
            mask = np.arange(5) < rng.integers(2, 6)
            err = check_gradients(lambda: (stack(x, mask) * probe).sum(), [x] + stack.parameters())
            assert err < 1e-4

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            FFTBlockParams(model_dim=10, n_heads=3)
        with pytest.raises(ConfigurationError):
            FFTBlockParams(conv_kernel_size=4)

    def test_mask_length_checked(self):
        with pytest.raises(DimensionError):
            tiny_block()(Tensor(np.zeros((4, 8))), np.ones(3, dtype=bool))


class TestSmallLayers:
    @pytest.mark.parametrize("make", [
        lambda r: Linear(4, 3, r, np.float64),
        lambda r: Conv1d(4, 3, 3, r, np.float64),
        lambda r: LayerNorm(4, np.float64),
    ])
    def test_gradients(self, rng, make):
        layer = make(np.random.default_rng(0))
        for p in layer.parameters():
            p.data += rng.normal(scale=0.1, size=p.shape)
        for _ in range(20):
            x = leaf(rng.normal(size=(5, 4)))
            out_dim = layer(x).shape[1]
            probe = rng.normal(size=(5, out_dim))
            assert check_gradients(lambda: (layer(x) * probe).sum(), [x] + layer.parameters()) < 1e-4

    def test_state_dict_round_trip(self):
        a = FFTStack(2, TINY, np.random.default_rng(0))
        b = FFTStack(2, TINY, np.random.default_rng(1))
        b.load_state_dict(a.state_dict())
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and np.array_equal(pa.data, pb.data)

    def test_state_dict_shape_mismatch_names_param(self):
        a = Linear(3, 2, np.random.default_rng(0))
        state = a.state_dict()
        state["weight"] = np.zeros((2, 2), dtype=np.float32)
        with pytest.raises(DimensionError, match="weight"):
            a.load_state_dict(state)

    def test_embedding_tables(self):
        tables = EmbeddingTables(5, 3, 2, 4, np.random.default_rng(0))
        assert tables.token([0, 4]).shape == (2, 4)
        with pytest.raises(IndexError):
            tables.speaker(3)


class TestPositionalEncoding:
    def test_first_row(self):
        pe = positional_encoding(4, 6)
        np.testing.assert_array_equal(pe[0], [0, 1, 0, 1, 0, 1])

    def test_interleaving(self):
        pe = positional_encoding(3, 4, dtype=np.float64)
        assert pe[1, 0] == pytest.approx(np.sin(1.0))
        assert pe[1, 1] == pytest.approx(np.cos(1.0))
        assert pe[2, 2] == pytest.approx(np.sin(2.0 / 100.0))

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigurationError):
            positional_encoding(3, 5)


class TestLengthRegulation:
    def test_example(self):
        h = Tensor(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_array_equal(length_regulate(h, [2, 0, 3]).data[:, 0], [1, 1, 3, 3, 3])

    def test_all_zero_durations(self):
        with pytest.raises(ValueError):
            expand_index([0, 0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            length_regulate(Tensor(np.zeros((3, 2))), [1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-100, 100), st.integers(1, 6)), min_size=1, max_size=10))
    def test_round_trip_with_averaging(self, pairs):
        values = np.array([v for v, _ in pairs])
        durations = np.array([d for _, d in pairs])
        frames = length_regulate(Tensor(values[:, None]), durations).data[:, 0]
        assert len(frames) == durations.sum()
        np.testing.assert_array_equal(average_pitch(frames, durations), values)

    def test_gradient_sums_over_repeats(self):
        h = leaf([[1.0], [2.0]])
        length_regulate(h, [3, 2]).sum().backward()
        np.testing.assert_array_equal(h.grad[:, 0], [3, 2])

    def test_gradient(self, rng):
        for _ in range(20):
            h = leaf(rng.normal(size=(4, 3)))
            d = rng.integers(0, 4, size=4)
            d[0] = max(d[0], 1)
            probe = rng.normal(size=(int(d.sum()), 3))
            assert check_gradients(lambda: (length_regulate(h, d) * probe).sum(), [h]) < 1e-4
