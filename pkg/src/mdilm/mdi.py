"""Adapting a backoff model to marginal constraints.

The adapted model has the exponential form p_out(w|h) * c(hw) / Z(h):
each constraint n-gram carries a log-scale parameter, the scaling factor
c of a full n-gram is exp of the sum of the parameters on its suffixes,
and Z(h) renormalizes each history.  Parameters are fit by iterative
scaling: each step multiplies a constraint's scale by the ratio of its
target marginal to its current marginal.

Both per-iteration quantities are computed in time linear in the model
size plus the number of constraints instead of per-history sums over the
vocabulary:

* Normalizers Z(h) follow a bottom-up recursion over histories.  Because
  p_out backs off, Z(h) equals bow(h) * Z(h') (h' = h minus its leftmost
  token) plus corrections from the stored continuations of h, plus
  scale-difference corrections where a constraint makes c(hw) differ from
  c(h'w).

* Marginals are right-aligned sums: expanding the backoff recursion level
  by level, every stored entry and every constraint contributes one
  correction term to the accumulator of each constraint that is a suffix
  of it.  The history weights enter through per-suffix sums of
  weight-times-backoff products down the suffix chain (the tables of
  :func:`compute_history_weights`), and the division by Z(h) folds into
  those weights.

Everything here works in linear probability space; log10 conversion
happens when models are built or emitted.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from ._kernels import Kernels, available_backends, get_kernels
from .arpa import BackoffModel, NGram
from .stats import ConstraintSet, HistoryDistribution

__all__ = [
    "AdaptationError", "ScalingField", "NormalizerTable", "GisState",
    "PackedModel", "PackedHistories", "scaling_factor", "compute_normalizers",
    "compute_history_weights", "compute_marginals", "gis_step", "run_gis",
    "build_adapted_model", "get_kernels", "available_backends",
]


class AdaptationError(RuntimeError):
    """Raised when scaling cannot proceed (zero marginal, bad normalizer)."""


class ScalingField:
    """Sparse log-scale overrides keyed by n-gram; absent keys mean 0."""

    def __init__(self, lams: Optional[dict[NGram, float]] = None) -> None:
        self.lams: dict[NGram, float] = dict(lams or {})

    @classmethod
    def from_constraints(cls, constraints: ConstraintSet,
                         lam: Sequence[float]) -> "ScalingField":
        if len(lam) != len(constraints):
            raise ValueError("one parameter per constraint required")
        return cls({g: float(v) for g, v in zip(constraints.ngrams, lam)})

    def get(self, ngram: NGram) -> float:
        return self.lams.get(ngram, 0.0)

    def items(self):
        return self.lams.items()

    def __len__(self) -> int:
        return len(self.lams)

    def scaling_factor(self, ngram: NGram) -> float:
        """exp of the summed overrides on ``ngram`` and all its suffixes."""
        total = 0.0
        for start in range(len(ngram)):
            total += self.lams.get(ngram[start:], 0.0)
        return math.exp(total)


def scaling_factor(field_: ScalingField, ngram: NGram) -> float:
    return field_.scaling_factor(ngram)


class NormalizerTable:
    """Z values for the empty history and every packed history.

    Histories not in the table inherit the value of their longest stored
    suffix; that is exact because a history without stored continuations
    or constraints satisfies Z(h) = Z(h').
    """

    def __init__(self, values: dict[NGram, float]) -> None:
        if () not in values:
            raise ValueError("normalizer table must include the empty history")
        self.values = values

    def z(self, history: NGram) -> float:
        h = tuple(history)
        while h not in self.values:
            h = h[1:]
        return self.values[h]

    def __getitem__(self, history: NGram) -> float:
        return self.values[tuple(history)]

    def __contains__(self, history: NGram) -> bool:
        return tuple(history) in self.values

    def items(self):
        return self.values.items()

    def __len__(self) -> int:
        return len(self.values)


class PackedModel:
    """Array layout of a model fused with constraint n-grams.

    Rows per order are the stored n-grams plus every substring of a
    constraint (the entry set the adapted model will have).  Virtual rows
    (constraint-implied, not stored) carry their backoff-evaluated
    probability and a zero seen-correction, so the same sweep covers both
    kinds.
    """

    def __init__(self, model: BackoffModel,
                 constraint_ngrams: Sequence[NGram] = ()) -> None:
        self.model = model
        self.vocab = model.vocab
        n = model.max_order
        self.n = n
        self.num_constraints = len(constraint_ngrams)

        work: list[set] = [set() for _ in range(n + 1)]
        for k in range(1, n + 1):
            work[k].update(model.orders[k])
        con_index: dict[NGram, int] = {}
        for i, gram in enumerate(constraint_ngrams):
            gram = tuple(gram)
            if not 1 <= len(gram) <= n:
                raise ValueError(f"constraint order {len(gram)} outside 1..{n}")
            if gram in con_index:
                raise ValueError("duplicate constraint n-gram")
            con_index[gram] = i
            for a in range(len(gram)):
                for b in range(a + 1, len(gram) + 1):
                    work[b - a].add(gram[a:b])

        self.grams: dict[int, list[NGram]] = {}
        self.index: dict[int, dict[NGram, int]] = {}
        for k in range(1, n + 1):
            rows = sorted(work[k])
            self.grams[k] = rows
            self.index[k] = {g: i for i, g in enumerate(rows)}
        for g in self.grams[1]:
            if g not in model.orders[1]:
                raise ValueError(
                    f"constraint token has no unigram entry: "
                    f"{self.vocab.tokens(g)}")

        bos = self.vocab.bos
        self.size = {k: len(self.grams[k]) for k in range(1, n + 1)}
        self.sfx: dict[int, np.ndarray] = {}
        self.hist: dict[int, np.ndarray] = {}
        self.p_eval: dict[int, np.ndarray] = {}
        self.d_corr: dict[int, np.ndarray] = {}
        self.pbo: dict[int, np.ndarray] = {}
        self.bow: dict[int, np.ndarray] = {}
        self.bow_hist: dict[int, np.ndarray] = {}
        self.stored: dict[int, np.ndarray] = {}
        self.had_bow: dict[int, np.ndarray] = {}

        for k in range(1, n + 1):
            m = self.size[k]
            sfx = np.full(m, -1, dtype=np.int64)
            hist = np.full(m, -1, dtype=np.int64)
            p_eval = np.zeros(m)
            d_corr = np.zeros(m)
            bow = np.ones(m)
            stored = np.zeros(m, dtype=bool)
            had_bow = np.zeros(m, dtype=bool)
            table = model.orders[k]
            lower = self.index[k - 1] if k > 1 else None
            for row, g in enumerate(self.grams[k]):
                ent = table.get(g)
                if ent is not None:
                    stored[row] = True
                    if ent[1] is not None:
                        bow[row] = 10.0 ** ent[1]
                        had_bow[row] = True
                if k > 1:
                    sfx[row] = lower[g[1:]]
                    hist[row] = lower[g[:-1]]
            if k == 1:
                p_eval = np.array([10.0 ** table[g][0] for g in self.grams[k]])
                pbo = p_eval.copy()
                bow_hist = np.ones(m)
            else:
                bow_hist = self.bow[k - 1][hist]
                pbo = self.p_eval[k - 1][sfx]
                logp = np.array([table[g][0] if g in table else 0.0
                                 for g in self.grams[k]])
                p_eval = np.where(stored, 10.0 ** logp, bow_hist * pbo)
                d_corr = np.where(stored, p_eval - bow_hist * pbo, 0.0)
                if bos is not None:
                    ends_bos = np.array([g[-1] == bos for g in self.grams[k]],
                                        dtype=bool)
                    d_corr[ends_bos] = 0.0
            self.sfx[k] = sfx
            self.hist[k] = hist
            self.p_eval[k] = p_eval
            self.d_corr[k] = d_corr
            self.pbo[k] = pbo
            self.bow[k] = bow
            self.bow_hist[k] = bow_hist
            self.stored[k] = stored
            self.had_bow[k] = had_bow

        if bos is None:
            self.s_uni = math.fsum(self.p_eval[1])
        else:
            self.s_uni = math.fsum(
                p for g, p in zip(self.grams[1], self.p_eval[1])
                if g[0] != bos)

        # constraint rows and suffix links, grouped by order
        self.lam_rows: dict[int, np.ndarray] = {}
        self.lam_ids: dict[int, np.ndarray] = {}
        self.lam_slot: dict[int, np.ndarray] = {}
        by_order: dict[int, list[tuple[int, int]]] = {k: [] for k in range(1, n + 1)}
        for gram, cid in con_index.items():
            by_order[len(gram)].append((self.index[len(gram)][gram], cid))
        for k in range(1, n + 1):
            pairs = sorted(by_order[k])
            self.lam_rows[k] = np.array([r for r, _ in pairs], dtype=np.int64)
            self.lam_ids[k] = np.array([c for _, c in pairs], dtype=np.int64)
            slots = np.full(self.size[k], -1, dtype=np.int64)
            slots[self.lam_rows[k]] = self.lam_ids[k]
            self.lam_slot[k] = slots

        self.csr_rows: dict[int, np.ndarray] = {}
        self.csr_cids: dict[int, np.ndarray] = {}
        for k in range(1, n + 1):
            rows_out: list[int] = []
            cids_out: list[int] = []
            if con_index:
                for row, g in enumerate(self.grams[k]):
                    for a in range(1, k):
                        cid = con_index.get(g[a:])
                        if cid is not None:
                            rows_out.append(row)
                            cids_out.append(cid)
            self.csr_rows[k] = np.array(rows_out, dtype=np.int64)
            self.csr_cids[k] = np.array(cids_out, dtype=np.int64)

    def num_rows(self) -> int:
        return sum(self.size.values())

    def row_counts(self) -> dict[int, int]:
        return dict(self.size)

    def work_counters(self, hist: Optional["PackedHistories"] = None) -> dict[str, int]:
        """Accumulator updates one iteration performs, by source."""
        n = self.n
        entry = 2 * self.num_rows()            # deposit sweep + marginal sweep
        entry += sum(self.size[k] for k in range(1, n))  # z assembly
        constraint = 2 * self.num_constraints  # scale update + stopping term
        shared = sum(len(self.csr_cids[k]) for k in range(1, n + 1))
        hist_updates = 0
        if hist is not None:
            hist_updates = len(hist.pt) + len(hist.g0_src) + sum(
                len(hist.g_src[j]) for j in range(1, n))
        return {"entry_updates": entry, "constraint_updates": constraint,
                "shared_suffix_updates": shared, "history_updates": hist_updates}


class PackedHistories:
    """History-weight machinery bound to a packed model.

    For every support history the suffix-chain backoff products and the
    normalizer slot are fixed across iterations; only the division by the
    current Z changes.
    """

    def __init__(self, packed: PackedModel, history_dist: HistoryDistribution) -> None:
        n = packed.n
        entries = sorted(history_dist.items())
        for h, _ in entries:
            if len(h) != n - 1:
                raise ValueError(
                    f"history length {len(h)} does not match order {n}")
        self.pt = np.array([p for _, p in entries])

        zslots: list[tuple[int, int]] = []
        g_rows: dict[int, list[int]] = {j: [] for j in range(1, n)}
        g_src: dict[int, list[int]] = {j: [] for j in range(1, n)}
        g_cum: dict[int, list[float]] = {j: [] for j in range(1, n)}
        g0_src: list[int] = []
        g0_cum: list[float] = []
        for i, (h, _) in enumerate(entries):
            slot = (0, -1)
            for j in range(n - 1, 0, -1):
                row = packed.index[j].get(h[n - 1 - j:])
                if row is not None:
                    slot = (j, row)
                    break
            zslots.append(slot)
            cum = 1.0
            for j in range(n - 1, -1, -1):
                s = h[n - 1 - j:]
                if j >= 1:
                    row = packed.index[j].get(s)
                    if row is not None:
                        g_rows[j].append(row)
                        g_src[j].append(i)
                        g_cum[j].append(cum)
                        cum *= packed.bow[j][row]
                    # unstored suffixes have backoff weight 1: cum unchanged
                else:
                    g0_src.append(i)
                    g0_cum.append(cum)
        self.g_rows = {j: np.array(v, dtype=np.int64) for j, v in g_rows.items()}
        self.g_src = {j: np.array(v, dtype=np.int64) for j, v in g_src.items()}
        self.g_cum = {j: np.array(v) for j, v in g_cum.items()}
        self.g0_src = np.array(g0_src, dtype=np.int64)
        self.g0_cum = np.array(g0_cum)

        groups: dict[int, list[int]] = {}
        for i, (k, _) in enumerate(zslots):
            groups.setdefault(k, []).append(i)
        self.zgroups = []
        for k, src in sorted(groups.items()):
            rows = np.array([zslots[i][1] for i in src], dtype=np.int64)
            self.zgroups.append((k, np.array(src, dtype=np.int64), rows))


def _field_to_packed(model: BackoffModel, field_: ScalingField):
    ngrams = sorted(field_.lams)
    lam = np.array([field_.lams[g] for g in ngrams])
    return PackedModel(model, ngrams), lam


def _table_from_arrays(packed: PackedModel, z0: float, z: dict) -> NormalizerTable:
    values: dict[NGram, float] = {(): z0}
    for k in range(1, packed.n):
        zk = z[k]
        for gram, row in packed.index[k].items():
            values[gram] = float(zk[row])
    return NormalizerTable(values)


def compute_normalizers(model: BackoffModel, field_: ScalingField,
                        histories: Optional[Iterable[NGram]] = None,
                        kernels: Optional[Kernels] = None) -> NormalizerTable:
    """Z(h) for the empty history, every stored history, and every history
    implied by the field's n-grams; ``histories`` may add further entries,
    resolved through the suffix rule."""
    kern = kernels or get_kernels()
    packed, lam = _field_to_packed(model, field_)
    try:
        _, z0, z, _ = kern.prepare(packed, lam)
    except FloatingPointError as exc:
        raise AdaptationError(str(exc)) from None
    table = _table_from_arrays(packed, z0, z)
    if histories is not None:
        for h in histories:
            table.values.setdefault(tuple(h), table.z(h))
    return table


def compute_history_weights(model: BackoffModel,
                            weights: Optional[HistoryDistribution] = None
                            ) -> dict[int, dict[NGram, float]]:
    """Suffix-indexed sums of backoff weights over longer histories.

    Unweighted, level L holds, for each length-L suffix s, the sum over
    all histories extending s to full length of the product of backoff
    weights along the chain; unstored histories contribute weight 1, so
    the sums reduce to |V|-powers plus corrections from stored rows.  With
    ``weights``, each full history additionally carries its probability
    and only the sparse support contributes.  Levels run n-2 down to 0.
    """
    n = model.max_order
    if n < 2:
        return {0: {(): (1.0 if weights is None else
                         math.fsum(p for _, p in weights.items()))}}
    levels: dict[int, dict[NGram, float]] = {}
    nv = len(model.vocab)

    def bow_of(gram: NGram) -> float:
        return 10.0 ** model.logbow(gram)

    if weights is None:
        default = 1.0
        prev: dict[NGram, float] = {}
        for level in range(n - 2, -1, -1):
            cur: dict[NGram, float] = {}
            for gram in model.orders[level + 1]:
                s = gram[1:]
                upper = prev.get(gram, default)
                cur[s] = cur.get(s, 0.0) + bow_of(gram) * upper - default
            new_default = nv * default
            for s in cur:
                cur[s] += new_default
            levels[level] = cur
            if level == 0:
                levels[0] = {(): cur.get((), new_default)}
            prev, default = cur, new_default
        return levels

    for level in range(n - 2, -1, -1):
        levels[level] = {}
    for h, p in weights.items():
        if len(h) != n - 1:
            raise ValueError("history length does not match model order")
        cum = p
        for level in range(n - 2, -1, -1):
            cum *= bow_of(h[n - 2 - level:])
            s = h[n - 1 - level:]
            levels[level][s] = levels[level].get(s, 0.0) + cum
    return levels


def compute_marginals(model: BackoffModel, field_: ScalingField,
                      normalizers: Optional[NormalizerTable],
                      history_dist: HistoryDistribution,
                      constraints: ConstraintSet,
                      kernels: Optional[Kernels] = None) -> np.ndarray:
    """Current-model marginal of every constraint under ``history_dist``.

    The current model is p_out * c / Z with c given by ``field_``.  When
    ``normalizers`` is None they are computed for the union of the field
    and constraint n-grams.
    """
    if len(constraints) == 0:
        return np.zeros(0)
    kern = kernels or get_kernels()
    ngrams = list(constraints.ngrams)
    extra = [g for g in sorted(field_.lams) if g not in set(ngrams)]
    packed = PackedModel(model, ngrams + extra)
    lam = np.array([field_.get(g) for g in ngrams + extra])
    try:
        scale, z0, z, dep = kern.prepare(packed, lam)
    except FloatingPointError as exc:
        raise AdaptationError(str(exc)) from None
    if normalizers is not None:
        z0 = normalizers.z(())
        z = {k: np.array([normalizers.z(g) for g in packed.grams[k]])
             for k in range(1, packed.n)}
    hist = PackedHistories(packed, history_dist)
    marg = kern.marginal_pass(packed, hist, scale, dep, z0, z)
    return marg[:len(constraints)]


@dataclass
class IterationRecord:
    iteration: int
    max_log_ratio: float
    seconds: float


@dataclass
class GisState:
    """Mutable scaling state across iterations."""

    constraints: ConstraintSet
    lam: np.ndarray
    iteration: int = 0
    marginals: Optional[np.ndarray] = None
    max_log_ratio: float = math.inf
    status: str = "running"
    records: list = field(default_factory=list)

    @property
    def field(self) -> ScalingField:
        return ScalingField.from_constraints(self.constraints, self.lam)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def gis_step(state: GisState, constraints: Optional[ConstraintSet] = None,
             gamma: float = 1.0) -> GisState:
    """One scaling update from freshly computed marginals.

    Returns a new state with each parameter moved by gamma times the log
    target/current ratio; normalizers are invalidated by construction
    (they are not part of the state).
    """
    cs = constraints if constraints is not None else state.constraints
    if state.marginals is None:
        raise AdaptationError("gis_step requires marginals for the current field")
    if np.any(state.marginals <= 0) or not np.all(np.isfinite(state.marginals)):
        raise AdaptationError("non-positive or non-finite marginal in update")
    ratio = np.log(cs.targets / state.marginals)
    return replace(state, lam=state.lam + gamma * ratio,
                   iteration=state.iteration + 1)


def run_gis(model: BackoffModel, constraints: ConstraintSet,
            history_dist: HistoryDistribution, *, gamma: float = 1.0,
            tol: float = 1e-4, max_iters: int = 200,
            log_stream=None, kernels: Optional[Kernels] = None,
            ) -> tuple[GisState, NormalizerTable]:
    """Fit the scaling parameters by iterative scaling.

    Each iteration recomputes normalizers and marginals for the current
    parameters, logs ``iter<TAB>max_abs_log_ratio<TAB>wall_seconds``, and
    stops when the largest absolute log ratio drops below ``tol``
    (status ``converged``), the iteration budget runs out
    (``max_iters``), or a ratio turns non-finite (``diverged``).
    """
    kern = kernels or get_kernels()
    state = GisState(constraints=constraints,
                     lam=np.zeros(len(constraints)))
    packed = PackedModel(model, constraints.ngrams)
    if len(constraints) == 0:
        _, z0, z, _ = kern.prepare(packed, state.lam)
        state.status = "converged"
        state.max_log_ratio = 0.0
        state.marginals = np.zeros(0)
        return state, _table_from_arrays(packed, z0, z)
    hist = PackedHistories(packed, history_dist)
    targets = constraints.targets
    z0, z, prev_lam = None, None, None
    for it in range(1, max_iters + 1):
        t0 = time.perf_counter()
        try:
            scale, new_z0, new_z, dep = kern.prepare(packed, state.lam)
        except FloatingPointError:
            # runaway parameters (typically infeasible targets); roll back
            # to the last evaluated point so state and table stay coherent
            state.status = "diverged"
            state.max_log_ratio = math.inf
            if z0 is None:
                raise AdaptationError("normalizers overflowed on the first "
                                      "iteration; model or targets corrupt")
            state.lam = prev_lam
            break
        z0, z = new_z0, new_z
        marg = kern.marginal_pass(packed, hist, scale, dep, z0, z)
        state.marginals = marg
        state.iteration = it
        if np.any(marg <= 0) or not np.all(np.isfinite(marg)):
            state.status = "diverged"
            state.max_log_ratio = math.inf
            break
        ratio = np.log(targets / marg)
        state.max_log_ratio = float(np.max(np.abs(ratio)))
        elapsed = time.perf_counter() - t0
        state.records.append(IterationRecord(it, state.max_log_ratio, elapsed))
        if log_stream is not None:
            log_stream.write(f"{it}\t{state.max_log_ratio:.6e}\t{elapsed:.4f}\n")
        if not math.isfinite(state.max_log_ratio):
            state.status = "diverged"
            break
        if state.max_log_ratio < tol:
            state.status = "converged"
            break
        if it == max_iters:
            state.status = "max_iters"
            break
        prev_lam = state.lam
        state.lam = state.lam + gamma * ratio
    return state, _table_from_arrays(packed, z0, z)


def build_adapted_model(model: BackoffModel, field_: ScalingField,
                        normalizers: NormalizerTable,
                        kernels: Optional[Kernels] = None) -> BackoffModel:
    """Materialize p_out * c / Z as a backoff model.

    Entry set: stored n-grams plus the field's n-grams, completed so every
    entry's suffix and history exist.  Explicit probabilities get
    p_out(w|h) * c(hw) / Z(h); backoff weights get Z(h') / Z(h) times the
    original weight.  An empty field returns a verbatim copy.
    """
    if len(field_) == 0:
        return model.copy()
    kern = kernels or get_kernels()
    packed, lam = _field_to_packed(model, field_)
    scale = kern.scale_factors(packed, lam)
    n = packed.n
    vocab = packed.vocab
    bos = vocab.bos
    out = BackoffModel(n, vocab)
    has_children: dict[int, set] = {k: set() for k in range(1, n)}
    for k in range(2, n + 1):
        has_children[k - 1].update(int(h) for h in packed.hist[k])
    for k in range(1, n + 1):
        c = scale.c[k]
        for row, gram in enumerate(packed.grams[k]):
            z_hist = normalizers.z(gram[:-1])
            if z_hist <= 0:
                raise AdaptationError(f"non-positive normalizer at history "
                                      f"{vocab.tokens(gram[:-1])}")
            if k == 1 and bos is not None and gram[0] == bos:
                logp = -99.0
            else:
                p = packed.p_eval[k][row] * c[row] / z_hist
                logp = math.log10(p)
            logbow = None
            if k < n:
                bow_ad = (normalizers.z(gram[1:]) / normalizers.z(gram)
                          * packed.bow[k][row])
                if (row in has_children[k] or packed.had_bow[k][row]
                        or abs(math.log10(bow_ad)) > 1e-10):
                    logbow = math.log10(bow_ad)
            out.add(gram, logp, logbow)
    return out
