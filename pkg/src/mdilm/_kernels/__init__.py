"""Kernel backends for the per-iteration array sweeps.

The hot loops of adaptation (normalizer recursion, marginal accumulation)
run over packed per-order arrays.  Two interchangeable primitive sets
exist: ``_fast``, a compiled extension, and ``_pure``, plain numpy.  The
compiled backend is preferred when importable; set ``MDILM_KERNEL`` to
``pure`` or ``fast`` to force one.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _pure

try:
    from . import _fast
except ImportError:
    _fast = None

_BACKENDS = {"pure": _pure}
if _fast is not None:
    _BACKENDS["fast"] = _fast


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def default_backend() -> str:
    env = os.environ.get("MDILM_KERNEL", "").strip().lower()
    if env in _BACKENDS:
        return env
    if env and env not in ("", "auto"):
        raise ValueError(f"unknown kernel backend {env!r}; "
                         f"available: {available_backends()}")
    return "fast" if "fast" in _BACKENDS else "pure"


@dataclass
class ScaleFactors:
    """Per-order scaling factors c plus the override deltas."""

    c: dict
    cdiff: dict


class Kernels:
    """Orchestration of one iteration's sweeps over a packed model.

    ``packed`` and ``hist`` are the array bundles built in
    :mod:`mdilm.mdi`; this class only touches their arrays, routing the
    heavy element-wise work through the selected primitive set.
    """

    def __init__(self, name: str | None = None) -> None:
        self.name = name or default_backend()
        try:
            self._p = _BACKENDS[self.name]
        except KeyError:
            raise ValueError(f"unknown kernel backend {self.name!r}; "
                             f"available: {available_backends()}") from None

    def scale_factors(self, packed, lam) -> ScaleFactors:
        """Scaling factor of every packed row, all orders, bottom-up."""
        p = self._p
        c: dict = {}
        cdiff: dict = {}
        for k in range(1, packed.n + 1):
            rows = packed.lam_rows[k]
            if lam is not None and len(rows):
                vals = np.asarray(lam, dtype=np.float64)[packed.lam_ids[k]]
            else:
                rows = rows[:0]
                vals = np.zeros(0)
            c[k], cdiff[k] = p.scale_order(
                c[k - 1] if k > 1 else None, packed.sfx[k], rows, vals,
                packed.size[k])
        return ScaleFactors(c, cdiff)

    def prepare(self, packed, lam):
        """Scale factors, normalizers and row deposits for one iteration.

        Uses the backend's fused per-order sweep when it has one; the
        arithmetic is identical either way.  Returns
        (scale, z0, z, dep).
        """
        p = self._p
        if not hasattr(p, "norm_order_fused"):
            scale = self.scale_factors(packed, lam)
            z0, z, dep = self.normalizer_pass(packed, scale)
            return scale, z0, z, dep
        n = packed.n
        lam_arr = (np.zeros(packed.num_constraints) if lam is None
                   else np.asarray(lam, dtype=np.float64))
        c: dict = {}
        cdiff: dict = {}
        dep: dict = {}
        accum: dict = {}
        rows = packed.lam_rows[1]
        vals = lam_arr[packed.lam_ids[1]] if len(rows) else np.zeros(0)
        c[1], cdiff[1] = p.scale_order(None, packed.sfx[1], rows, vals,
                                       packed.size[1])
        dep[1] = p.deposit_rows(packed.d_corr[1], c[1], packed.bow_hist[1],
                                packed.pbo[1], rows, cdiff[1])
        for k in range(2, n + 1):
            c[k], dep[k], accum[k - 1] = p.norm_order_fused(
                c[k - 1], packed.sfx[k], packed.hist[k], packed.d_corr[k],
                packed.bow_hist[k], packed.pbo[k], packed.lam_slot[k],
                lam_arr, packed.size[k - 1])
            cdiff[k] = np.zeros(0)
        z0 = packed.s_uni + p.total(dep[1])
        z = {}
        for k in range(1, n):
            if k == 1:
                z[1] = p.z_first(packed.bow[1], z0, accum[1])
            else:
                z[k] = p.z_order(packed.bow[k], packed.sfx[k], z[k - 1],
                                 accum[k])
        self._check_z(z0, z)
        return ScaleFactors(c, cdiff), z0, z, dep

    def normalizer_pass(self, packed, scale: ScaleFactors):
        """Z for the empty history and every packed row of order < n.

        Returns (z0, z, dep) where dep holds the per-row correction values
        (reused by the marginal pass).
        """
        p = self._p
        n = packed.n
        dep = {}
        for k in range(1, n + 1):
            dep[k] = p.deposit_rows(packed.d_corr[k], scale.c[k],
                                    packed.bow_hist[k], packed.pbo[k],
                                    packed.lam_rows[k], scale.cdiff[k])
        z0 = packed.s_uni + p.total(dep[1])
        z = {}
        for k in range(1, n):
            accum = p.scatter_add(packed.hist[k + 1], dep[k + 1], packed.size[k])
            if k == 1:
                z[1] = p.z_first(packed.bow[1], z0, accum)
            else:
                z[k] = p.z_order(packed.bow[k], packed.sfx[k], z[k - 1], accum)
        self._check_z(z0, z)
        return z0, z, dep

    @staticmethod
    def _check_z(z0, z) -> None:
        if z0 <= 0 or not np.isfinite(z0) or any(
                len(zk) and (zk.min() <= 0 or not np.isfinite(zk).all())
                for zk in z.values()):
            raise FloatingPointError("non-positive or non-finite normalizer")

    def marginal_pass(self, packed, hist, scale: ScaleFactors, dep, z0, z):
        """Current marginal of every constraint, one pass over the rows."""
        p = self._p
        n, num_con = packed.n, packed.num_constraints
        rho = np.empty(len(hist.pt))
        for k, src, rows in hist.zgroups:
            if k == 0:
                rho[src] = hist.pt[src] / z0
            else:
                rho[src] = hist.pt[src] / z[k][rows]
        g0 = p.dot_gather(rho, hist.g0_src, hist.g0_cum)
        g = {}
        for j in range(1, n):
            g[j] = p.weighted_scatter(hist.g_rows[j], hist.g_src[j], rho,
                                      hist.g_cum[j], packed.size[j])
        fused = hasattr(p, "marg_csr_fused")
        marg = np.zeros(num_con)
        for k in range(1, n + 1):
            if len(packed.csr_cids[k]):
                if k == 1:
                    marg += p.csr_accumulate(packed.csr_cids[k],
                                             packed.csr_rows[k],
                                             dep[1] * g0, num_con)
                elif fused:
                    marg += p.marg_csr_fused(dep[k], g[k - 1], packed.hist[k],
                                             packed.csr_rows[k],
                                             packed.csr_cids[k], num_con)
                else:
                    vals = dep[k] * p.gather(g[k - 1], packed.hist[k])
                    marg += p.csr_accumulate(packed.csr_cids[k],
                                             packed.csr_rows[k], vals, num_con)
            rows = packed.lam_rows[k]
            if len(rows):
                if k == 1:
                    gstop = g0
                else:
                    gstop = g[k - 1][packed.hist[k][rows]]
                marg[packed.lam_ids[k]] += (gstop * packed.p_eval[k][rows]
                                            * scale.c[k][rows])
        return marg


def get_kernels(name: str | None = None) -> Kernels:
    return Kernels(name)
