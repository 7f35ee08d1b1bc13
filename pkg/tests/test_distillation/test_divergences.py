"""Tests for the KL and alpha divergences."""

import numpy as np
import pytest

from src.distillation.buckets import BucketedDistribution
from src.distillation.divergences import (
    adaptive_alpha_nodes,
    alpha_divergence,
    alpha_nodes,
    kld,
    kld_nodes,
)
from src.utils.errors import ContractError, DimensionError


def buckets(probs, ids=None):
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    if ids is None:
        ids = np.tile(np.arange(probs.shape[1] - 1), (probs.shape[0], 1))
    return BucketedDistribution(probs, np.atleast_2d(ids))


def close_pair(rng, n_nodes=4, width=6):
    """Normalized distributions whose ratios stay well inside the clamp."""
    logits = rng.standard_normal((n_nodes, width))
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    shifted = logits + 0.3 * rng.standard_normal((n_nodes, width))
    q = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    assert np.all(q / p > 0.25) and np.all(q / p < 4.0)
    return p, q


def textbook_alpha(p, q, alpha):
    return float(np.sum((1.0 - np.sum(p**alpha * q ** (1.0 - alpha), axis=1)) / (alpha * (1.0 - alpha))))


class TestKLD:
    def test_identical_is_zero(self):
        p = buckets([[0.2, 0.3, 0.5]])
        assert kld(p, p).item() == 0.0

    def test_log_two(self):
        assert kld(buckets([[1.0, 0.0, 0.0]]), buckets([[0.5, 0.25, 0.25]])).item() == pytest.approx(np.log(2.0))

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = rng.dirichlet(np.ones(5), size=3)
            q = rng.dirichlet(np.ones(5), size=3)
            assert kld(buckets(p), buckets(q)).item() >= -1e-12

    def test_sums_over_nodes(self):
        p, q = close_pair(np.random.default_rng(1))
        assert kld(buckets(p), buckets(q)).item() == pytest.approx(float(kld_nodes(p, q).data.sum()))

    def test_zero_student_mass_is_floored(self):
        assert np.isfinite(kld(buckets([[0.5, 0.5, 0.0]]), buckets([[1.0, 0.0, 0.0]])).item())

    def test_misaligned_ids(self):
        with pytest.raises(ContractError):
            kld(buckets([[0.5, 0.5, 0.0]], [[0, 1]]), buckets([[0.5, 0.5, 0.0]], [[0, 2]]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            kld_nodes(np.full((1, 3), 1 / 3), np.full((1, 4), 0.25))


class TestAlphaDivergence:
    def test_alpha_one_is_kl(self):
        p, q = close_pair(np.random.default_rng(2))
        assert alpha_nodes(p, q, 1.0).data == pytest.approx(kld_nodes(p, q).data, rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("alpha", [-1.0, 0.5, 0.999])
    def test_matches_textbook_form(self, alpha):
        p, q = close_pair(np.random.default_rng(3))
        value = float(alpha_nodes(p, q, alpha).data.sum())
        assert value == pytest.approx(textbook_alpha(p, q, alpha), rel=1e-9, abs=1e-12)

    def test_alpha_near_one_approaches_kl(self):
        p, q = close_pair(np.random.default_rng(4))
        near = float(alpha_nodes(p, q, 0.999).data.sum())
        exact = float(kld_nodes(p, q).data.sum())
        assert near == pytest.approx(exact, rel=1e-2)

    def test_adaptive_is_max_of_both(self):
        p, q = close_pair(np.random.default_rng(5))
        lower = alpha_nodes(p, q, -1.0).data
        upper = alpha_nodes(p, q, 1.0).data
        assert np.array_equal(adaptive_alpha_nodes(p, q, -1.0, 1.0).data, np.maximum(lower, upper))

    def test_identical_is_zero(self):
        p = buckets([[0.1, 0.2, 0.7]])
        assert alpha_divergence(p, p).item() == pytest.approx(0.0, abs=1e-15)

    def test_clamped_terms_stay_non_negative(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = rng.dirichlet(np.full(5, 0.2), size=3)
            q = rng.dirichlet(np.full(5, 0.2), size=3)
            for alpha in (-1.0, 0.0, 0.5, 1.0, 2.0):
                assert np.all(alpha_nodes(p, q, alpha).data >= -1e-12)

    def test_invalid_beta(self):
        with pytest.raises(ContractError):
            alpha_nodes(np.full((1, 3), 1 / 3), np.full((1, 3), 1 / 3), -1.0, beta=1.0)
