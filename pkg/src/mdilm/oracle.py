"""Brute-force reference implementations for testing.

Everything here enumerates the full conditional table and sums directly.
None of it shares computation with :mod:`mdilm.mdi` beyond the domain
types; slow and obvious on purpose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np

from .arpa import BackoffModel, NGram
from .mdi import ScalingField
from .stats import ConstraintSet, HistoryDistribution

GUARD_CELLS = 10_000_000


@dataclass
class DenseModel:
    """Full table of p(w|h): shape (|V|,) * (n-1) + (|V|,)."""

    num_words: int
    order: int
    table: np.ndarray
    bos: Optional[int] = None

    def prob(self, history: NGram, word: int) -> float:
        return float(self.table[tuple(history) + (word,)])

    def histories(self):
        return product(range(self.num_words), repeat=self.order - 1)

    def row(self, history: NGram) -> np.ndarray:
        return self.table[tuple(history)]

    def copy(self) -> "DenseModel":
        return DenseModel(self.num_words, self.order, self.table.copy(), self.bos)


def expand_dense(model: BackoffModel) -> DenseModel:
    """Evaluate the backoff recursion at every (history, word) cell."""
    nv = len(model.vocab)
    n = model.max_order
    if nv ** n > GUARD_CELLS:
        raise ValueError(f"dense expansion would need {nv ** n} cells")
    table = np.zeros((nv,) * n)
    for h in product(range(nv), repeat=n - 1):
        for w in range(nv):
            table[h + (w,)] = 10.0 ** model.logprob(h, w)
    return DenseModel(nv, n, table, bos=model.vocab.bos)


def direct_scale(field: ScalingField, ngram: NGram) -> float:
    """exp of the summed field values on the n-gram's suffixes."""
    return math.exp(math.fsum(
        field.get(ngram[a:]) for a in range(len(ngram))))


def naive_normalizer(dense: DenseModel, field: ScalingField, history: NGram) -> float:
    """Direct sum over the vocabulary; <s> is never a predicted word."""
    h = tuple(history)
    if len(h) != dense.order - 1:
        raise ValueError("naive_normalizer needs a full-length history")
    return math.fsum(
        dense.prob(h, w) * direct_scale(field, h + (w,))
        for w in range(dense.num_words) if w != dense.bos)


def direct_normalizer(model: BackoffModel, field: ScalingField,
                      history: NGram) -> float:
    """Like naive_normalizer but for histories of any length, via lookups."""
    h = tuple(history)
    bos = model.vocab.bos
    return math.fsum(
        (10.0 ** model.logprob(h, w)) * direct_scale(field, h + (w,))
        for w in range(len(model.vocab)) if w != bos)


def naive_marginals(dense: DenseModel, field: ScalingField,
                    history_dist: HistoryDistribution,
                    constraints: ConstraintSet) -> np.ndarray:
    """Marginals of the scaled-renormalized model, by full enumeration."""
    marg = np.zeros(len(constraints))
    ngrams = list(constraints.ngrams)
    for h, ph in history_dist.items():
        z = naive_normalizer(dense, field, h)
        for w in range(dense.num_words):
            if w == dense.bos:
                continue
            full = tuple(h) + (w,)
            p = ph * dense.prob(h, w) * direct_scale(field, full) / z
            for i, s in enumerate(ngrams):
                if full[len(full) - len(s):] == s:
                    marg[i] += p
    return marg


def naive_gis(dense: DenseModel, constraints: ConstraintSet,
              history_dist: HistoryDistribution, *, gamma: float = 1.0,
              tol: float = 1e-4, max_iters: int = 200):
    """Iterative scaling on the dense table.

    Mirrors the efficient loop step for step: evaluate marginals, stop on
    convergence or at the iteration budget, otherwise update every
    parameter by gamma times its log target/current ratio.  Returns
    (adapted DenseModel, lam, status, iterations).
    """
    if dense.num_words ** dense.order > GUARD_CELLS:
        raise ValueError("instance too large for the dense reference")
    lam = np.zeros(len(constraints))
    status = "running"
    iters = 0
    if len(constraints) == 0:
        return dense.copy(), lam, "converged", 0
    targets = constraints.targets
    for it in range(1, max_iters + 1):
        iters = it
        field = ScalingField.from_constraints(constraints, lam)
        marg = naive_marginals(dense, field, history_dist, constraints)
        if np.any(marg <= 0) or not np.all(np.isfinite(marg)):
            status = "diverged"
            break
        ratio = np.log(targets / marg)
        if float(np.max(np.abs(ratio))) < tol:
            status = "converged"
            break
        if it == max_iters:
            status = "max_iters"
            break
        lam = lam + gamma * ratio
    field = ScalingField.from_constraints(constraints, lam)
    adapted = dense.copy()
    for h in dense.histories():
        z = naive_normalizer(dense, field, h)
        for w in range(dense.num_words):
            adapted.table[h + (w,)] = (
                dense.prob(h, w) * direct_scale(field, h + (w,)) / z)
    return adapted, lam, status, iters
