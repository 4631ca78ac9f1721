import itertools

import numpy as np
import pytest

from xspeech.aligner import (
    Aligner,
    AlignmentError,
    beta_binomial_log_prior,
    best_path,
    duration_loss,
    durations_from_log,
    forward_sum_from_log,
    forward_sum_loss,
    log_soft_alignment,
    soft_alignment,
    viterbi_durations,
)
from xspeech import autodiff as ad
from xspeech.autodiff import DimensionError, Tensor
from xspeech.gradcheck import check_gradients

from conftest import leaf, random_simplex


def monotonic_paths(t_len, n):
    """Every frame-to-token map that starts at 0, ends at n-1 and steps by 0 or 1."""
    for steps in itertools.product((0, 1), repeat=t_len - 1):
        if sum(steps) == n - 1:
            yield np.concatenate([[0], np.cumsum(steps, dtype=np.int64)]).astype(np.int64)


def path_prob(soft, path):
    return float(np.prod(soft[np.arange(len(path)), path]))


def prob_space_forward(soft):
    t_len, n = soft.shape
    alpha = np.zeros((t_len, n))
    alpha[0, 0] = soft[0, 0]
    for t in range(1, t_len):
        for j in range(n):
            alpha[t, j] = (alpha[t - 1, j] + (alpha[t - 1, j - 1] if j else 0.0)) * soft[t, j]
    return alpha[-1, -1]


def small_cases(rng, count):
    for _ in range(count):
        n = int(rng.integers(1, 5))
        t_len = int(rng.integers(n, 7))
        yield random_simplex(rng, (t_len, n))


class TestForwardSum:
    def test_matches_path_enumeration(self, rng):
        for soft in small_cases(rng, 300):
            brute = -np.log(sum(path_prob(soft, p) for p in monotonic_paths(*soft.shape)))
            loss = forward_sum_loss(Tensor(soft)).item()
            assert loss >= 0
            assert abs(loss - brute) <= 1e-6

    def test_log_space_matches_probability_space(self, rng):
        for soft in small_cases(rng, 200):
            assert abs(forward_sum_loss(Tensor(soft)).item() + np.log(prob_space_forward(soft))) <= 1e-5

    def test_from_log_agrees(self, rng):
        for soft in small_cases(rng, 50):
            a = forward_sum_loss(Tensor(soft)).item()
            b = forward_sum_from_log(Tensor(np.log(soft))).item()
            assert a == pytest.approx(b, abs=1e-12)

    def test_long_sequence_is_finite(self, rng):
        soft = random_simplex(rng, (400, 30))
        assert np.isfinite(forward_sum_loss(Tensor(soft)).item())

    def test_infeasible(self):
        with pytest.raises(AlignmentError):
            forward_sum_loss(Tensor(np.full((2, 3), 1 / 3)))

    def test_gradients(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 5))
            logits = leaf(rng.normal(size=(int(rng.integers(n, 8)), n)))
            assert check_gradients(lambda: forward_sum_from_log(ad.log_softmax(logits, axis=1)), [logits]) < 1e-4
            assert check_gradients(lambda: forward_sum_loss(ad.softmax(logits, axis=1)), [logits]) < 1e-4


class TestViterbi:
    def test_best_path_dominates_enumeration(self, rng):
        for soft in small_cases(rng, 300):
            path = best_path(soft)
            best = path_prob(soft, path)
            for p in monotonic_paths(*soft.shape):
                assert best >= path_prob(soft, p) * (1 - 1e-12)

    def test_durations_cover_all_frames(self, rng):
        for soft in small_cases(rng, 100):
            d = viterbi_durations(soft)
            assert d.sum() == soft.shape[0]
            assert np.all(d >= 1)

    def test_ties_stay_on_current_token(self):
        # every cell ties; the forward pass keeps the stay move, so token 1 is
        # entered at the first frame where it is reachable
        soft = np.full((4, 2), 0.5)
        np.testing.assert_array_equal(viterbi_durations(soft), [1, 3])

    def test_deterministic_and_order_sensitive(self, rng):
        soft = np.array([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9], [0.1, 0.9]])
        assert np.array_equal(viterbi_durations(soft), viterbi_durations(soft.copy()))
        np.testing.assert_array_equal(viterbi_durations(soft), [2, 3])
        np.testing.assert_array_equal(viterbi_durations(soft[[0, 2, 3, 4, 1]]), [1, 4])


class TestSoftAlignment:
    def test_rows_are_distributions(self, rng):
        soft = soft_alignment(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(9, 3)))).data
        np.testing.assert_allclose(soft.sum(1), 1, atol=1e-6)

    def test_closest_key_wins(self):
        keys = Tensor(np.array([[0.0, 0.0], [5.0, 5.0]]))
        queries = Tensor(np.array([[0.1, 0.0], [4.9, 5.0]]))
        soft = soft_alignment(keys, queries).data
        assert soft[0, 0] > 0.99 and soft[1, 1] > 0.99

    def test_log_matches_softmax(self, rng):
        k, q = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(7, 3)))
        np.testing.assert_allclose(np.exp(log_soft_alignment(k, q).data), soft_alignment(k, q).data, atol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            soft_alignment(Tensor(np.zeros((3, 2))), Tensor(np.zeros((4, 3))))

    def test_gradient(self, rng):
        for _ in range(20):
            k, q = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(5, 4)))
            probe = rng.normal(size=(5, 3))
            prior = beta_binomial_log_prior(5, 3)
            assert check_gradients(lambda: (log_soft_alignment(k, q, prior) * probe).sum(), [k, q]) < 1e-4


class TestPrior:
    def test_rows_are_log_distributions(self):
        prior = beta_binomial_log_prior(12, 5)
        np.testing.assert_allclose(np.exp(prior).sum(1), 1, atol=1e-12)

    def test_mode_moves_along_diagonal(self):
        modes = np.exp(beta_binomial_log_prior(20, 5)).argmax(1)
        assert modes[0] == 0 and modes[-1] == 4
        assert np.all(np.diff(modes) >= 0)

    def test_zero_scaling_disables_prior_in_aligner(self, rng):
        text, mel = rng.normal(size=(3, 4)), rng.normal(size=(8, 6))
        with_prior = Aligner(4, 6, 5, np.random.default_rng(0), np.float64, prior_scaling=1.0)
        without = Aligner(4, 6, 5, np.random.default_rng(0), np.float64, prior_scaling=0.0)
        a = with_prior(Tensor(text), Tensor(mel)).soft.data
        b = without(Tensor(text), Tensor(mel)).soft.data
        assert not np.allclose(a, b)
        k, q = without.keys(Tensor(text)), without.queries(Tensor(mel))
        np.testing.assert_allclose(b, soft_alignment(k, q).data, atol=1e-12)


class TestDurations:
    def test_loss_in_log_domain(self):
        loss = duration_loss(Tensor(np.log1p([2.0, 3.0])), [2, 3]).item()
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_loss_shape_mismatch(self):
        with pytest.raises(DimensionError):
            duration_loss(Tensor(np.zeros(3)), [1, 2])

    def test_inference_rounding_and_floor(self):
        np.testing.assert_array_equal(durations_from_log(np.log1p([2.4, 2.6, 0.0, -0.9])), [2, 3, 1, 1])

    def test_aligner_result(self, rng):
        aligner = Aligner(4, 6, 5, np.random.default_rng(0), np.float64)
        res = aligner(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(10, 6))))
        assert res.durations.sum() == 10 and np.all(res.durations >= 1)
        assert res.loss_align.item() >= 0
        assert res.soft.shape == (10, 3)

    def test_aligner_gradient(self, rng):
        aligner = Aligner(3, 4, 3, np.random.default_rng(0), np.float64)
        for _ in range(20):
            text, mel = leaf(rng.normal(size=(3, 3))), leaf(rng.normal(size=(6, 4)))
            err = check_gradients(lambda: aligner(text, mel).loss_align, [text, mel] + aligner.parameters())
            assert err < 1e-4
