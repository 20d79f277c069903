"""Synthetic-model generation and per-iteration timing.

Models come from random power-law corpora run through the absolute
discounting estimator, so they have realistic suffix sharing; constraint
sets are sampled from the seen n-grams.  One measurement times a full
scaling iteration: normalizers, marginals, parameter update.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._kernels import get_kernels
from .arpa import BackoffModel
from .mdi import PackedHistories, PackedModel
from .stats import (Constraint, ConstraintSet, CountTable, HistoryDistribution,
                    count_ngrams, estimate_backoff_lm, history_distribution)


def synthetic_corpus(rng: np.random.Generator, num_tokens: int,
                     vocab_size: int = 5000, zipf: float = 1.1,
                     mean_len: int = 18) -> list[str]:
    """Sentences of power-law tokens totalling roughly ``num_tokens``."""
    weights = 1.0 / np.arange(1, vocab_size + 1) ** zipf
    weights /= weights.sum()
    lines = []
    made = 0
    while made < num_tokens:
        length = int(rng.integers(mean_len // 2, mean_len + mean_len // 2))
        ids = rng.choice(vocab_size, size=length, p=weights)
        lines.append(" ".join(f"w{i}" for i in ids))
        made += length
    return lines


def synthetic_model(seed: int, target_entries: int, order: int = 3,
                    vocab_size: int = 5000, discount: float = 0.6,
                    ) -> tuple[BackoffModel, CountTable]:
    """A normalized backoff model close to ``target_entries`` entries.

    A probe corpus estimates the entries-per-token rate, then corpus
    chunks are added until the distinct-n-gram count reaches the target
    (the rate drops as types repeat).  Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    probe_tokens = min(max(target_entries // 4, 2000), 30000)
    counts = count_ngrams(synthetic_corpus(rng, probe_tokens, vocab_size),
                          order)

    def entries() -> int:
        return sum(len(counts.counts[k]) for k in range(1, order + 1))

    made = probe_tokens
    while entries() < target_entries:
        rate = entries() / made
        missing = target_entries - entries()
        chunk = max(int(missing / rate * 0.8), 2000)
        lines = synthetic_corpus(rng, chunk, vocab_size)
        counts.merge(count_ngrams(lines, order, counts.vocab, grow=True))
        made += chunk
    model = estimate_backoff_lm(counts, discount)
    return model, counts


def sample_constraints(rng: np.random.Generator, model: BackoffModel,
                       counts: CountTable, k: int) -> ConstraintSet:
    """``k`` constraints sampled uniformly from the eligible seen n-grams,
    with count-derived targets."""
    n = model.max_order
    bos, eos = model.vocab.bos, model.vocab.eos
    t_n = counts.total(n)
    eligible = []
    for order in range(1, n + 1):
        for gram, c in counts.counts[order].items():
            if bos in gram and not (order == n and gram[0] == bos
                                    and bos not in gram[1:]):
                continue
            if eos in gram[:-1]:
                continue
            eligible.append((gram, c))
    if k > len(eligible):
        raise ValueError(f"only {len(eligible)} eligible n-grams, need {k}")
    eligible.sort()
    idx = rng.choice(len(eligible), size=k, replace=False)
    items = [Constraint(eligible[i][0], eligible[i][1] / t_n, eligible[i][1])
             for i in sorted(idx)]
    return ConstraintSet(model.vocab, items)


@dataclass
class BenchResult:
    entries: int
    num_constraints: int
    backend: str
    seconds: float
    counters: dict


def time_iteration(model: BackoffModel, constraints: ConstraintSet,
                   history_dist: HistoryDistribution, backend: str,
                   repeats: int = 3) -> BenchResult:
    """Average wall time of one full scaling iteration."""
    kern = get_kernels(backend)
    packed = PackedModel(model, constraints.ngrams)
    hist = PackedHistories(packed, history_dist)
    lam = np.zeros(len(constraints))
    targets = constraints.targets
    times = []
    for _ in range(max(repeats, 1)):
        t0 = time.perf_counter()
        scale, z0, z, dep = kern.prepare(packed, lam)
        marg = kern.marginal_pass(packed, hist, scale, dep, z0, z)
        _ = lam + np.log(targets / np.maximum(marg, 1e-300))
        times.append(time.perf_counter() - t0)
    return BenchResult(entries=model.num_entries(),
                       num_constraints=len(constraints),
                       backend=kern.name,
                       seconds=float(np.mean(times)),
                       counters=packed.work_counters(hist))


def run_grid(entry_sizes, constraint_sizes, seed: int = 0, order: int = 3,
             backends=("auto",), repeats: int = 3):
    """Cross product of entry and constraint grids; yields BenchResults."""
    for target in entry_sizes:
        model, counts = synthetic_model(seed, target, order=order)
        hd = history_distribution(counts)
        for k in constraint_sizes:
            rng = np.random.default_rng(seed + 1)
            cs = sample_constraints(rng, model, counts, k)
            for backend in backends:
                name = None if backend == "auto" else backend
                yield time_iteration(model, cs, hd, name, repeats=repeats)
