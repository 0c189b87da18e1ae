"""MaxSim scoring, softmax/KL/hard losses and their analytic gradients."""

import math

import numpy as np
import pytest

from collective_kd.errors import EmptyInputError, ValidationError
from collective_kd.models import EncodedPassage, EncodedQuery, Projection, RelevanceDistribution
from collective_kd.relevance import (
    argmax_pattern, grad_hard_loss, grad_kd_loss, hard_loss, kl_divergence, maxsim,
    softmax_distribution, student_distribution,
)

FD_STEP = 1e-4


def _instance(rng, n_candidates=None):
    """Random dim_in=8, dim_out=4 problem with 2-4 candidates of 3-6 tokens"""
    n_candidates = n_candidates or int(rng.integers(2, 5))
    projection = Projection(rng.standard_normal((4, 8)) / np.sqrt(8))
    query = rng.standard_normal((int(rng.integers(3, 7)), 8))
    candidates = [rng.standard_normal((int(rng.integers(3, 7)), 8)) for _ in range(n_candidates)]
    return projection, query, candidates


def _unit_rows(rng, rows, dim):
    values = rng.standard_normal((rows, dim))
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _finite_differences(loss_fn, projection, query, candidates):
    """Central differences; NaN where the argmax pattern changes inside the stencil"""
    base = argmax_pattern(projection, query, candidates)
    grad = np.full(projection.weights.shape, np.nan)
    for idx in np.ndindex(*projection.weights.shape):
        plus, minus = projection.copy(), projection.copy()
        plus.weights[idx] += FD_STEP
        minus.weights[idx] -= FD_STEP
        if not (_same_pattern(base, argmax_pattern(plus, query, candidates))
                and _same_pattern(base, argmax_pattern(minus, query, candidates))):
            continue
        grad[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * FD_STEP)
    return grad


def _assert_matches_fd(analytic, numeric):
    mask = ~np.isnan(numeric)
    assert mask.sum() > 0
    a, n = analytic[mask], numeric[mask]
    relative = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    assert relative.max() < 1e-4


class TestMaxSim:

    def test_worked_example(self):
        query = EncodedQuery(0, [[1.0, 0.0], [0.0, 1.0]])
        passage = EncodedPassage(1, [[0.6, 0.8], [1.0, 0.0]])
        assert maxsim(query, passage) == pytest.approx(1.8, abs=1e-12)

    def test_matches_double_loop(self, rng):
        q = rng.standard_normal((4, 5))
        p = rng.standard_normal((7, 5))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        naive = sum(max(float(np.dot(qi, pj)) for pj in p) for qi in q)
        assert maxsim(EncodedQuery(0, q), EncodedPassage(0, p)) == pytest.approx(naive, abs=1e-12)

    def test_verbatim_rows_score_query_length(self, rng):
        q = rng.standard_normal((3, 6))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        p = np.vstack([q, rng.standard_normal((2, 6)) / 10 + q[:2]])
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        assert maxsim(EncodedQuery(0, q), EncodedPassage(0, p)) == pytest.approx(3.0, abs=1e-12)

    def test_orthogonal_scores_zero(self):
        assert maxsim(EncodedQuery(0, [[0.0, 1.0]]), EncodedPassage(0, [[1.0, 0.0], [-1.0, 0.0]])) == 0.0

    def test_rows_must_be_unit(self):
        with pytest.raises(ValidationError, match="unit"):
            EncodedQuery(0, [[2.0, 0.0]])


    def test_passage_row_order_is_irrelevant(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            query = EncodedQuery(0, _unit_rows(rng, 4, 6))
            rows = _unit_rows(rng, 7, 6)
            shuffled = EncodedPassage(1, rows[rng.permutation(7)])
            assert maxsim(query, shuffled) == pytest.approx(maxsim(query, EncodedPassage(1, rows)), abs=1e-12)

    def test_appending_a_row_never_lowers_the_score(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            query = EncodedQuery(0, _unit_rows(rng, 3, 6))
            rows = _unit_rows(rng, 5, 6)
            before = maxsim(query, EncodedPassage(1, rows))
            after = maxsim(query, EncodedPassage(1, np.vstack([rows, _unit_rows(rng, 1, 6)])))
            assert after >= before - 1e-12


class TestSoftmax:

    def test_single_candidate(self):
        assert softmax_distribution([3.7]).probabilities.tolist() == [1.0]

    def test_closed_form(self):
        dist = softmax_distribution([0.0, math.log(3)], candidates=[10, 20])
        np.testing.assert_allclose(dist.probabilities, [0.25, 0.75], atol=1e-12)
        assert dist.probability(20) == pytest.approx(0.75)

    def test_shift_invariance(self, rng):
        scores = rng.standard_normal(6)
        np.testing.assert_allclose(
            softmax_distribution(scores).probabilities,
            softmax_distribution(scores + 1234.5).probabilities,
            atol=1e-12,
        )

    def test_rejects_empty_and_non_finite(self):
        with pytest.raises(EmptyInputError, match="empty input"):
            softmax_distribution([])
        with pytest.raises(ValidationError, match="non-finite"):
            softmax_distribution([0.0, float("nan")])


class TestKlDivergence:

    def test_self_divergence_is_zero(self):
        dist = RelevanceDistribution((1, 2, 3), [0.2, 0.3, 0.5])
        assert kl_divergence(dist, dist) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_and_asymmetry(self):
        target = RelevanceDistribution((1, 2), [0.5, 0.5])
        student = RelevanceDistribution((1, 2), [0.25, 0.75])
        forward = kl_divergence(target, student)
        backward = kl_divergence(student, target)
        assert forward == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-12)
        assert forward == pytest.approx(0.14384, abs=1e-5)
        assert backward == pytest.approx(0.25 * math.log(0.5) + 0.75 * math.log(1.5), abs=1e-12)
        assert backward != pytest.approx(forward, abs=1e-3)

    def test_non_negative(self, rng):
        for _ in range(50):
            a = softmax_distribution(rng.standard_normal(5))
            b = softmax_distribution(rng.standard_normal(5))
            assert kl_divergence(a, b) >= 0.0

    def test_candidates_must_align(self):
        with pytest.raises(ValidationError):
            kl_divergence(RelevanceDistribution((1, 2), [0.5, 0.5]), RelevanceDistribution((2, 1), [0.5, 0.5]))


class TestHardLoss:

    def test_no_negatives(self):
        assert hard_loss(1.3, []) == 0.0

    def test_symmetric_pair(self):
        assert hard_loss(1.0, [1.0]) == pytest.approx(math.log(2), abs=1e-12)

    def test_equals_cross_entropy_of_softmax(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            scores = rng.standard_normal(int(rng.integers(2, 9))) * 3
            dist = softmax_distribution(scores)
            assert hard_loss(scores[0], scores[1:]) == pytest.approx(-math.log(dist.probabilities[0]), abs=1e-10)

    def test_closed_form(self):
        assert hard_loss(2.0, [0.0]) == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)
        assert hard_loss(2.0, [0.0]) == pytest.approx(0.1269, abs=1e-4)


class TestKdGradient:

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            projection, query, candidates = _instance(rng)
            target = softmax_distribution(rng.standard_normal(len(candidates)))
            _, analytic = grad_kd_loss(projection, query, candidates, target)
            numeric = _finite_differences(
                lambda w: grad_kd_loss(w, query, candidates, target)[0], projection, query, candidates
            )
            _assert_matches_fd(analytic, numeric)

    def test_matches_finite_differences_at_rescaled_point(self):
        rng = np.random.default_rng(7)
        projection, query, candidates = _instance(rng, n_candidates=2)
        projection = Projection(2.0 * projection.weights)
        target = softmax_distribution([0.3, -0.2])
        _, analytic = grad_kd_loss(projection, query, candidates, target)
        numeric = _finite_differences(
            lambda w: grad_kd_loss(w, query, candidates, target)[0], projection, query, candidates
        )
        _assert_matches_fd(analytic, numeric)

    def test_self_target_gives_null_gradient(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            projection, query, candidates = _instance(rng)
            own = student_distribution(projection, query, candidates, range(len(candidates)))
            loss, grad = grad_kd_loss(projection, query, candidates, own)
            assert loss == pytest.approx(0.0, abs=1e-12)
            assert np.linalg.norm(grad) < 1e-8


class TestHardGradient:

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(99)
        for _ in range(10):
            projection, query, candidates = _instance(rng)
            positive = int(rng.integers(len(candidates)))
            _, analytic = grad_hard_loss(projection, query, candidates, positive)
            numeric = _finite_differences(
                lambda w: grad_hard_loss(w, query, candidates, positive)[0], projection, query, candidates
            )
            _assert_matches_fd(analytic, numeric)

    def test_single_candidate_has_zero_loss(self, rng):
        projection, query, candidates = _instance(rng, n_candidates=2)
        loss, grad = grad_hard_loss(projection, query, candidates[:1])
        assert loss == 0.0
        assert np.all(grad == 0.0)
