# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the per-iteration array primitives.

Must stay in lockstep with ``_pure.py``: same functions, same arithmetic,
single-threaded, so both backends give identical results to float
precision.
"""
from libc.math cimport exp

import numpy as np

NAME = "fast"


def scale_order(c_prev, const long[::1] sfx, const long[::1] lam_rows,
                const double[::1] lam_vals, Py_ssize_t n_rows):
    cdef double[::1] out = np.empty(n_rows)
    cdef double[::1] cdiff = np.empty(lam_rows.shape[0])
    cdef double[::1] prev
    cdef Py_ssize_t i, r
    cdef double before
    if c_prev is None:
        for i in range(n_rows):
            out[i] = 1.0
    else:
        prev = c_prev
        for i in range(n_rows):
            out[i] = prev[sfx[i]]
    for i in range(lam_rows.shape[0]):
        r = lam_rows[i]
        before = out[r]
        out[r] = before * exp(lam_vals[i])
        cdiff[i] = out[r] - before
    return np.asarray(out), np.asarray(cdiff)


def deposit_rows(const double[::1] d_corr, const double[::1] c,
                 const double[::1] bow_hist, const double[::1] pbo,
                 const long[::1] lam_rows, const double[::1] cdiff):
    cdef Py_ssize_t n = d_corr.shape[0]
    cdef double[::1] dep = np.empty(n)
    cdef Py_ssize_t i, r
    for i in range(n):
        dep[i] = d_corr[i] * c[i]
    for i in range(lam_rows.shape[0]):
        r = lam_rows[i]
        dep[r] = dep[r] + bow_hist[r] * pbo[r] * cdiff[i]
    return np.asarray(dep)


def scatter_add(const long[::1] idx, const double[::1] weights,
                Py_ssize_t size):
    cdef double[::1] out = np.zeros(size)
    cdef Py_ssize_t i
    for i in range(idx.shape[0]):
        out[idx[i]] += weights[i]
    return np.asarray(out)


def z_first(const double[::1] bow, double z0, const double[::1] accum):
    cdef Py_ssize_t n = bow.shape[0]
    cdef double[::1] out = np.empty(n)
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = bow[i] * z0 + accum[i]
    return np.asarray(out)


def z_order(const double[::1] bow, const long[::1] sfx,
            const double[::1] z_prev, const double[::1] accum):
    cdef Py_ssize_t n = bow.shape[0]
    cdef double[::1] out = np.empty(n)
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = bow[i] * z_prev[sfx[i]] + accum[i]
    return np.asarray(out)


def gather(const double[::1] values, const long[::1] idx):
    cdef Py_ssize_t n = idx.shape[0]
    cdef double[::1] out = np.empty(n)
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = values[idx[i]]
    return np.asarray(out)


def csr_accumulate(const long[::1] cids, const long[::1] rows,
                   const double[::1] vals, Py_ssize_t num_constraints):
    cdef double[::1] out = np.zeros(num_constraints)
    cdef Py_ssize_t i
    for i in range(cids.shape[0]):
        out[cids[i]] += vals[rows[i]]
    return np.asarray(out)


def weighted_scatter(const long[::1] idx_out, const long[::1] idx_src,
                     const double[::1] values, const double[::1] cum,
                     Py_ssize_t size):
    cdef double[::1] out = np.zeros(size)
    cdef Py_ssize_t i
    for i in range(idx_out.shape[0]):
        out[idx_out[i]] += values[idx_src[i]] * cum[i]
    return np.asarray(out)


def dot_gather(const double[::1] values, const long[::1] idx_src,
               const double[::1] cum):
    cdef double total = 0.0
    cdef Py_ssize_t i
    for i in range(idx_src.shape[0]):
        total += values[idx_src[i]] * cum[i]
    return total


def total(const double[::1] values):
    # pairwise to match numpy's summation error profile closely enough
    cdef double acc = 0.0, comp = 0.0, y, t
    cdef Py_ssize_t i
    for i in range(values.shape[0]):
        y = values[i] - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
    return acc


def norm_order_fused(const double[::1] c_prev, const long[::1] sfx,
                     const long[::1] hist, const double[::1] d_corr,
                     const double[::1] bow_hist, const double[::1] pbo,
                     const long[::1] lam_slot, const double[::1] lam,
                     Py_ssize_t lower_size):
    """Scale factors, row deposits and history accumulation in one sweep.

    Only used for orders >= 2 (c_prev and hist must be valid)."""
    cdef Py_ssize_t n = sfx.shape[0]
    cdef double[::1] c = np.empty(n)
    cdef double[::1] dep = np.empty(n)
    cdef double[::1] accum = np.zeros(lower_size)
    cdef Py_ssize_t i
    cdef long slot
    cdef double ci, scaled, d
    for i in range(n):
        ci = c_prev[sfx[i]]
        slot = lam_slot[i]
        if slot >= 0:
            scaled = ci * exp(lam[slot])
            d = d_corr[i] * scaled + bow_hist[i] * pbo[i] * (scaled - ci)
            ci = scaled
        else:
            d = d_corr[i] * ci
        c[i] = ci
        dep[i] = d
        accum[hist[i]] += d
    return np.asarray(c), np.asarray(dep), np.asarray(accum)


def marg_csr_fused(const double[::1] dep, const double[::1] g_prev,
                   const long[::1] hist, const long[::1] csr_rows,
                   const long[::1] csr_cids, Py_ssize_t num_constraints):
    """out[cid] += dep[row] * g_prev[hist[row]] over the suffix links."""
    cdef double[::1] out = np.zeros(num_constraints)
    cdef Py_ssize_t i
    cdef long r
    for i in range(csr_rows.shape[0]):
        r = csr_rows[i]
        out[csr_cids[i]] += dep[r] * g_prev[hist[r]]
    return np.asarray(out)
