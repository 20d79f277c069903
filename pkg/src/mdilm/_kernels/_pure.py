"""Numpy implementations of the per-iteration array primitives.

These are the fallback used when the compiled extension is unavailable.
Each function mirrors a function in ``_fast.pyx`` exactly; the two
backends must agree to float precision, so keep any algebraic change in
sync.
"""
from __future__ import annotations

import numpy as np

NAME = "pure"


def scale_order(c_prev, sfx, lam_rows, lam_vals, n_rows):
    """Scaling factors for one order: inherit the suffix value, then apply
    exp(lam) at override rows.  Returns (c, cdiff) with cdiff the applied
    change at the override rows."""
    if c_prev is None:
        c = np.ones(n_rows)
    else:
        c = c_prev[sfx]
    if len(lam_rows):
        before = c[lam_rows].copy()
        after = before * np.exp(lam_vals)
        c[lam_rows] = after
        cdiff = after - before
    else:
        cdiff = np.zeros(0)
    return c, cdiff


def deposit_rows(d_corr, c, bow_hist, pbo, lam_rows, cdiff):
    """Per-row correction value: seen-entry term plus, at override rows,
    the backoff-weighted scale difference."""
    dep = d_corr * c
    if len(lam_rows):
        dep[lam_rows] += bow_hist[lam_rows] * pbo[lam_rows] * cdiff
    return dep


def scatter_add(idx, weights, size):
    if size == 0 or len(idx) == 0:
        return np.zeros(size)
    return np.bincount(idx, weights=weights, minlength=size)


def z_first(bow, z0, accum):
    return bow * z0 + accum


def z_order(bow, sfx, z_prev, accum):
    return bow * z_prev[sfx] + accum


def gather(values, idx):
    return values[idx]


def csr_accumulate(cids, rows, vals, num_constraints):
    if num_constraints == 0 or len(cids) == 0:
        return np.zeros(num_constraints)
    return np.bincount(cids, weights=vals[rows], minlength=num_constraints)


def weighted_scatter(idx_out, idx_src, values, cum, size):
    if size == 0 or len(idx_out) == 0:
        return np.zeros(size)
    return np.bincount(idx_out, weights=values[idx_src] * cum, minlength=size)


def dot_gather(values, idx_src, cum):
    if len(idx_src) == 0:
        return 0.0
    return float(values[idx_src] @ cum)


def total(values):
    return float(np.sum(values))
