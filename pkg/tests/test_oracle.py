import math

import numpy as np
import pytest

from mdilm.mdi import ScalingField
from mdilm.oracle import (DenseModel, direct_scale, expand_dense, naive_gis,
                          naive_marginals, naive_normalizer)
from mdilm.stats import Constraint, ConstraintSet, HistoryDistribution

from conftest import build_model, random_model


def test_expand_dense_m1(m1):
    dense = expand_dense(m1)
    # rows are histories a, b
    np.testing.assert_allclose(dense.table, [[0.3, 0.7], [0.6, 0.4]],
                               rtol=1e-12)


def test_expand_dense_uniform():
    model = build_model({"a": 0.5, "b": 0.5})
    dense = expand_dense(model)
    np.testing.assert_allclose(dense.table, [0.5, 0.5])


def test_dense_rows_sum_to_one():
    rng = np.random.default_rng(31)
    model, _ = random_model(rng, num_words=5, order=3)
    dense = expand_dense(model)
    sums = dense.table.sum(axis=-1)
    np.testing.assert_allclose(sums, np.ones_like(sums), atol=1e-12)


def test_expand_dense_guard():
    model = build_model({f"w{i}": 1 / 300 for i in range(300)})
    model.max_order = 3  # pretend a huge order to trip the cell guard
    with pytest.raises(ValueError, match="cells"):
        expand_dense(model)


def test_naive_normalizer_unit_for_empty_field(m1):
    dense = expand_dense(m1)
    for h in ((m1.vocab.id("a"),), (m1.vocab.id("b"),)):
        assert naive_normalizer(dense, ScalingField(), h) == pytest.approx(1.0)


def test_naive_normalizer_m1_values(m1):
    dense = expand_dense(m1)
    a, b = m1.vocab.id("a"), m1.vocab.id("b")
    field = ScalingField({(a,): math.log(2.0)})
    assert naive_normalizer(dense, field, (a,)) == pytest.approx(1.3)
    assert naive_normalizer(dense, field, (b,)) == pytest.approx(1.6)


def test_naive_gis_no_constraints_is_identity(m1):
    dense = expand_dense(m1)
    a = m1.vocab.id("a")
    hd = HistoryDistribution({(a,): 1.0})
    adapted, lam, status, iters = naive_gis(dense, ConstraintSet(m1.vocab), hd)
    assert status == "converged" and iters == 0 and len(lam) == 0
    np.testing.assert_allclose(adapted.table, dense.table)


def test_naive_gis_fully_constrained_unigram():
    model = build_model({"a": 0.5, "b": 0.5})
    dense = expand_dense(model)
    cs = ConstraintSet(model.vocab,
                       [Constraint((model.vocab.id("a"),), 0.7, 1)])
    hd = HistoryDistribution({(): 1.0})
    adapted, _, status, _ = naive_gis(dense, cs, hd, tol=1e-10)
    assert status == "converged"
    np.testing.assert_allclose(adapted.table, [0.7, 0.3], atol=1e-9)


def test_naive_gis_matches_bisection_on_m1(m1):
    # scalar instance: one unigram constraint under a uniform history mix
    a, b = m1.vocab.id("a"), m1.vocab.id("b")
    dense = expand_dense(m1)
    cs = ConstraintSet(m1.vocab, [Constraint((a,), 0.6, 1)])
    hd = HistoryDistribution({(a,): 0.5, (b,): 0.5})
    _, lam, status, _ = naive_gis(dense, cs, hd, tol=1e-9)
    assert status == "converged"
    assert lam[0] == pytest.approx(0.6667427177, abs=1e-6)


def test_direct_scale_multiplies_suffix_overrides():
    field = ScalingField({(2,): 0.5, (1, 2): 0.25})
    assert direct_scale(field, (0, 1, 2)) == pytest.approx(math.exp(0.75))
    assert direct_scale(field, (1, 2)) == pytest.approx(math.exp(0.75))
    assert direct_scale(field, (2,)) == pytest.approx(math.exp(0.5))
