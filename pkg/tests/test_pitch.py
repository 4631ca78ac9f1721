import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xspeech.autodiff import DimensionError, Tensor
from xspeech.gradcheck import check_gradients
from xspeech.pitch import (
    PitchEmbedding,
    VariancePredictor,
    average_pitch,
    binarize_contour,
    pitch_to_embedding,
    sdp_loss,
    sip_loss,
)

from conftest import leaf

# integer-valued pitches keep strict order under the floating-point maps below
pitch_lists = st.lists(st.integers(-40, 40).map(float), min_size=1, max_size=15)


class TestAveragePitch:
    def test_example(self):
        np.testing.assert_array_equal(average_pitch([1, 3, 5, 5, 5, 8], [2, 3, 1]), [2, 5, 8])

    def test_zero_duration_token(self):
        np.testing.assert_array_equal(average_pitch([1.0, 3.0], [1, 0, 1]), [1, 0, 3])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            average_pitch([1.0, 2.0, 3.0], [1, 1])


class TestBinarize:
    def test_example(self):
        np.testing.assert_array_equal(binarize_contour([1.0, 2.0, 2.0, 1.5, 3.0]), [0, 1, 0, 0, 1])

    def test_first_bit_is_zero(self):
        assert binarize_contour([5.0])[0] == 0

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            binarize_contour([])

    @settings(max_examples=200, deadline=None)
    @given(pitch_lists, st.sampled_from(["affine", "cube", "exp", "arctan"]))
    def test_invariant_under_monotone_maps(self, values, kind):
        x = np.array(values)
        maps = {
            "affine": lambda v: 3.0 * v + 7.0,
            "cube": lambda v: v ** 3,
            "exp": lambda v: np.exp(v / 10.0),
            "arctan": np.arctan,
        }
        np.testing.assert_array_equal(binarize_contour(maps[kind](x)), binarize_contour(x))


class TestLosses:
    def test_sip_decreases_toward_targets(self, rng):
        for _ in range(20):
            bits = rng.integers(0, 2, size=6)
            direction = 2.0 * bits - 1.0
            base = rng.normal(size=6)
            values = [sip_loss(Tensor(base + s * direction), bits).item() for s in np.linspace(0, 10, 30)]
            assert all(b < a for a, b in zip(values, values[1:]))

    def test_sip_summed_over_tokens(self):
        assert sip_loss(Tensor(np.zeros(4)), [0, 1, 0, 1]).item() == pytest.approx(4 * np.log(2))

    def test_sdp_is_mean_squared_error(self):
        assert sdp_loss(Tensor([1.0, 2.0, 3.0]), [1.0, 0.0, 0.0]).item() == pytest.approx(13 / 3)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            sip_loss(Tensor(np.zeros(3)), [0, 1])
        with pytest.raises(DimensionError):
            sdp_loss(Tensor(np.zeros(3)), [0.0])

    def test_loss_gradients(self, rng):
        for _ in range(20):
            x = leaf(rng.normal(size=5))
            bits = rng.integers(0, 2, size=5)
            target = rng.normal(size=5)
            assert check_gradients(lambda: sip_loss(x, bits), [x]) < 1e-4
            assert check_gradients(lambda: sdp_loss(x, target), [x]) < 1e-4


class TestPredictors:
    def test_output_shape(self, rng):
        pred = VariancePredictor(8, 6, 3, np.random.default_rng(0))
        assert pred(Tensor(rng.normal(size=(7, 8)).astype(np.float32))).shape == (7,)

    def test_eval_is_deterministic(self, rng):
        pred = VariancePredictor(8, 6, 3, np.random.default_rng(0)).eval()
        x = Tensor(rng.normal(size=(7, 8)).astype(np.float32))
        assert np.array_equal(pred(x, np.random.default_rng(1)).data, pred(x, np.random.default_rng(2)).data)

    def test_predictor_gradient(self, rng):
        pred = VariancePredictor(4, 5, 3, np.random.default_rng(0), dtype=np.float64).eval()
        for _ in range(20):
            x = leaf(rng.normal(size=(5, 4)))
            probe = rng.normal(size=5)
            assert check_gradients(lambda: (pred(x) * probe).sum(), [x] + pred.parameters()) < 1e-4

    def test_embedding_accepts_bits_and_tensors(self, rng):
        emb = PitchEmbedding(6, np.random.default_rng(0), dtype=np.float64)
        a = pitch_to_embedding([0, 1, 1, 0], emb)
        b = pitch_to_embedding(Tensor(np.array([0.0, 1.0, 1.0, 0.0])), emb)
        assert a.shape == (4, 6)
        np.testing.assert_array_equal(a.data, b.data)

    def test_embedding_gradient(self, rng):
        emb = PitchEmbedding(4, np.random.default_rng(0), dtype=np.float64)
        for _ in range(20):
            v = leaf(rng.normal(size=6))
            probe = rng.normal(size=(6, 4))
            assert check_gradients(lambda: (emb(v) * probe).sum(), [v] + emb.parameters()) < 1e-4
