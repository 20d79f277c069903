"""n-gram counting and the statistics derived from it.

Corpora are plain text, one sentence per line, whitespace tokenized.  Each
sentence is padded with one ``<s>`` and one ``</s>``; a k-gram is counted
at every position where its k tokens are available, except the bare
``<s>`` unigram.  Counts therefore live on per-order position spaces:
T_k, the order-k total, shrinks as k grows because early-sentence
positions lack long contexts.

Constraint targets are all normalized by the top-order total T_n so that
targets of different orders refer to the same joint space; nested targets
are then consistent by construction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .arpa import BOS, EOS, UNK, ArpaError, BackoffModel, NGram, Vocabulary

logger = logging.getLogger(__name__)

CONSTRAINT_HEADER = "#mdi-constraints v1"


class CountTable:
    """Per-order n-gram counts plus per-order position totals."""

    def __init__(self, n: int, vocab: Vocabulary) -> None:
        self.n = n
        self.vocab = vocab
        self.counts: list[dict[NGram, int]] = [{} for _ in range(n + 1)]
        self.oov_skipped = 0

    def add(self, ngram: NGram, weight: int = 1) -> None:
        table = self.counts[len(ngram)]
        table[ngram] = table.get(ngram, 0) + weight

    def count(self, ngram: NGram) -> int:
        return self.counts[len(ngram)].get(ngram, 0)

    def total(self, order: int) -> int:
        return sum(self.counts[order].values())

    def continuation_total(self, history: NGram) -> int:
        """Count of ``history`` in history position (sum over continuations)."""
        k = len(history) + 1
        return sum(c for g, c in self.counts[k].items() if g[:-1] == history)

    def merge(self, other: "CountTable") -> "CountTable":
        """Add another shard's counts in place; shards must share a vocabulary."""
        if other.n != self.n or other.vocab is not self.vocab:
            raise ValueError("can only merge count tables over the same vocabulary")
        for k in range(1, self.n + 1):
            mine = self.counts[k]
            for gram, c in other.counts[k].items():
                mine[gram] = mine.get(gram, 0) + c
        self.oov_skipped += other.oov_skipped
        return self


def count_ngrams(lines: Iterable[str], n: int,
                 vocab: Optional[Vocabulary] = None,
                 grow: Optional[bool] = None) -> CountTable:
    """Count all n-grams of orders 1..n from a sentence-per-line stream.

    With a fixed ``vocab``, out-of-vocabulary tokens map to ``<unk>`` when
    the vocabulary has one, otherwise they are skipped (no n-gram spans a
    skipped position) and tallied in ``oov_skipped``.  Without ``vocab`` a
    fresh vocabulary is grown from the corpus; pass ``grow=True`` to grow
    a supplied vocabulary instead (shared-vocabulary sharding).
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    if grow is None:
        grow = vocab is None
    if vocab is None:
        vocab = Vocabulary()
        vocab.add(BOS)
        vocab.add(EOS)
    table = CountTable(n, vocab)
    bos, eos, unk = vocab.bos, vocab.eos, vocab.unk
    if bos is None or eos is None:
        raise ValueError("vocabulary must define <s> and </s> for counting")
    saw_any = False
    for line in lines:
        tokens = line.split()
        if not tokens:
            continue
        saw_any = True
        ids: list[Optional[int]] = [bos]
        for tok in tokens:
            tid = vocab.add(tok) if grow else vocab.get(tok)
            if tid is None:
                if unk is not None:
                    tid = unk
                else:
                    table.oov_skipped += 1
            ids.append(tid)
        ids.append(eos)
        for pos in range(1, len(ids)):
            if ids[pos] is None:
                continue
            for k in range(1, n + 1):
                start = pos - k + 1
                if start < 0:
                    break
                gram = ids[start:pos + 1]
                if None in gram:
                    continue
                if k == 1 and gram[0] == bos:
                    continue
                table.add(tuple(gram))
    if not saw_any:
        raise ValueError("empty corpus")
    if table.oov_skipped:
        logger.warning("skipped %d out-of-vocabulary tokens", table.oov_skipped)
    return table


@dataclass(frozen=True)
class Constraint:
    ngram: NGram
    target: float
    count: int


class ConstraintSet:
    """Duplicate-free n-gram marginal constraints with targets in (0, 1]."""

    def __init__(self, vocab: Vocabulary, items: Sequence[Constraint] = ()) -> None:
        self.vocab = vocab
        self.ngrams: list[NGram] = []
        self._index: dict[NGram, int] = {}
        self.targets = np.zeros(0)
        self.counts = np.zeros(0, dtype=np.int64)
        if items:
            self._extend(items)

    def _extend(self, items: Sequence[Constraint]) -> None:
        targets = list(self.targets)
        counts = list(self.counts)
        for it in items:
            if it.ngram in self._index:
                raise ValueError(f"duplicate constraint {self.vocab.tokens(it.ngram)}")
            if not (0.0 < it.target <= 1.0):
                raise ValueError(
                    f"constraint target out of (0, 1]: {it.target} "
                    f"at {self.vocab.tokens(it.ngram)}")
            self._index[it.ngram] = len(self.ngrams)
            self.ngrams.append(it.ngram)
            targets.append(it.target)
            counts.append(it.count)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.counts = np.asarray(counts, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ngrams)

    def __iter__(self) -> Iterator[Constraint]:
        for i, g in enumerate(self.ngrams):
            yield Constraint(g, float(self.targets[i]), int(self.counts[i]))

    def __contains__(self, ngram: NGram) -> bool:
        return ngram in self._index

    def order_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for g in self.ngrams:
            out[len(g)] = out.get(len(g), 0) + 1
        return out

    def check_nested_monotonicity(self) -> list[tuple[NGram, NGram]]:
        """Return nested pairs (s, xs) where target(xs) > target(s)."""
        bad = []
        for g in self.ngrams:
            for k in range(1, len(g)):
                s = g[k:]
                j = self._index.get(s)
                if j is not None and self.targets[self._index[g]] > self.targets[j] + 1e-12:
                    bad.append((s, g))
        return bad

    def to_tsv(self, stream) -> None:
        stream.write(CONSTRAINT_HEADER + "\n")
        for c in self:
            toks = " ".join(self.vocab.tokens(c.ngram))
            stream.write(f"{len(c.ngram)}\t{toks}\t{c.target:.12g}\t{c.count}\n")

    @classmethod
    def from_tsv(cls, lines: Iterable[str], vocab: Vocabulary) -> "ConstraintSet":
        """Read constraints, re-encoding tokens against ``vocab``.

        Rows with tokens outside the vocabulary are dropped with a warning
        (they cannot receive probability mass history-independently).
        """
        it = iter(lines)
        header = next(it, "").strip()
        if header != CONSTRAINT_HEADER:
            raise ValueError(f"bad constraint file header: {header!r}")
        items = []
        dropped = 0
        for line in it:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"malformed constraint row: {line!r}")
            order = int(fields[0])
            tokens = fields[1].split(" ")
            if len(tokens) != order:
                raise ValueError(f"order/tokens mismatch in row: {line!r}")
            ids = tuple(vocab.get(t) for t in tokens)
            if any(i is None for i in ids):
                dropped += 1
                continue
            items.append(Constraint(ids, float(fields[2]), int(fields[3])))
        if dropped:
            logger.warning("dropped %d constraints with out-of-vocabulary tokens",
                           dropped)
        return cls(vocab, items)


def select_constraints(counts: CountTable, thresholds: Sequence[int],
                       model_vocab: Optional[Vocabulary] = None) -> ConstraintSet:
    """Pick every counted k-gram with count >= thresholds[k-1] as a constraint.

    Targets are count / T_n.  Boundary symbols are filtered: ``<s>`` may
    appear only as the first token of a full-order n-gram (anywhere else
    the n-gram set it names is empty), ``</s>`` may appear only as the
    last token.  With ``model_vocab`` given, k-grams using tokens unknown
    to that vocabulary are dropped and re-encoded constraints are returned
    in its id space.
    """
    n = counts.n
    if len(thresholds) != n:
        raise ValueError(f"need {n} thresholds, got {len(thresholds)}")
    if any(t < 1 for t in thresholds):
        raise ValueError("thresholds must be >= 1")
    t_n = counts.total(n)
    if t_n == 0:
        raise ValueError("no top-order n-grams counted")
    vocab = counts.vocab
    bos, eos = vocab.bos, vocab.eos
    out_vocab = model_vocab if model_vocab is not None else vocab
    items = []
    dropped_oov = 0
    for k in range(1, n + 1):
        thr = thresholds[k - 1]
        for gram, c in counts.counts[k].items():
            if c < thr:
                continue
            if bos in gram and not (k == n and gram[0] == bos and bos not in gram[1:]):
                continue
            if eos in gram[:-1]:
                continue
            if model_vocab is not None:
                toks = vocab.tokens(gram)
                ids = tuple(model_vocab.get(t) for t in toks)
                if any(i is None for i in ids):
                    dropped_oov += 1
                    continue
                gram = ids
            items.append(Constraint(gram, c / t_n, c))
    if dropped_oov:
        logger.warning("dropped %d constraints outside the model vocabulary",
                       dropped_oov)
    items.sort(key=lambda it: (len(it.ngram), it.ngram))
    mass: dict[int, float] = {}
    for it in items:
        mass[len(it.ngram)] = mass.get(len(it.ngram), 0.0) + it.target
    for k, total in sorted(mass.items()):
        if total > 1.0 + 1e-9:
            # order-k suffix sets are disjoint, so their targets cannot
            # jointly exceed 1; short sentences inflate low-order counts
            # relative to T_n.  Raise the order-k threshold to fix this.
            logger.warning(
                "order-%d constraint targets sum to %.4f > 1; the set is "
                "jointly infeasible and scaling will not converge", k, total)
    return ConstraintSet(out_vocab, items)


class HistoryDistribution:
    """Sparse probabilities over length n-1 histories, summing to 1."""

    def __init__(self, probs: dict[NGram, float]) -> None:
        if probs:
            total = math.fsum(probs.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"history distribution sums to {total}, not 1")
            if any(p <= 0 for p in probs.values()):
                raise ValueError("history probabilities must be positive")
        self.probs = dict(probs)

    def __len__(self) -> int:
        return len(self.probs)

    def items(self):
        return self.probs.items()

    def get(self, history: NGram) -> float:
        return self.probs.get(history, 0.0)


def history_distribution(counts: CountTable, order: Optional[int] = None) -> HistoryDistribution:
    """Maximum-likelihood distribution of the (order-1)-token histories.

    p(h) is the number of times h was followed by a counted word, divided
    by the top-order position total; only seen histories appear.
    """
    n = order if order is not None else counts.n
    if n > counts.n:
        raise ValueError(f"count table has order {counts.n} < requested {n}")
    t_n = counts.total(n)
    if t_n == 0:
        raise ValueError("no top-order n-grams counted")
    if n == 1:
        return HistoryDistribution({(): 1.0})
    hist_counts: dict[NGram, int] = {}
    for gram, c in counts.counts[n].items():
        h = gram[:-1]
        hist_counts[h] = hist_counts.get(h, 0) + c
    return HistoryDistribution({h: c / t_n for h, c in hist_counts.items()})


def estimate_backoff_lm(counts: CountTable, discount: float) -> BackoffModel:
    """Absolute-discounting backoff estimates from a count table.

    Unigrams are maximum likelihood (count / T_1), which keeps every word
    strictly positive; ``<s>`` gets the conventional -99 sentinel score.
    For orders k >= 2, each seen continuation is discounted by
    ``discount`` and the released mass is spread over the lower order
    through the backoff weight.  The result is exactly normalized.
    """
    if not 0.0 <= discount < 1.0:
        raise ValueError("discount must be in [0, 1)")
    n = counts.n
    t1 = counts.total(1)
    if t1 == 0:
        raise ValueError("empty count table")
    src = counts.vocab
    bos_used = n >= 2 and src.bos is not None and any(
        gram[0] == src.bos for gram in counts.counts[2])
    seen = {w for (w,) in counts.counts[1]}
    if bos_used:
        seen.add(src.bos)
    if len(seen) == len(src):
        vocab = src
        remap = None
    else:
        # the model's vocabulary is exactly its unigram section
        vocab = Vocabulary()
        remap = {old: vocab.add(src.token(old)) for old in sorted(seen)}
    bos = vocab.bos

    def m(gram: NGram) -> NGram:
        return gram if remap is None else tuple(remap[i] for i in gram)

    model = BackoffModel(n, vocab)
    for w, c in sorted(counts.counts[1].items()):
        model.add(m(w), math.log10(c / t1))
    if bos_used and (bos,) not in model.orders[1]:
        model.add((bos,), -99.0)

    for k in range(2, n + 1):
        by_history: dict[NGram, list[tuple[NGram, int]]] = {}
        for gram, c in counts.counts[k].items():
            by_history.setdefault(m(gram)[:-1], []).append((m(gram), c))
        for h in sorted(by_history):
            seen = by_history[h]
            h_total = sum(c for _, c in seen)
            if h_total == 0:
                raise ValueError(
                    f"history {vocab.tokens(h)} has no counted continuations")
            released = discount * len(seen) / h_total
            lower_mass = math.fsum(model.prob(h[1:], g[-1]) for g, _ in seen)
            if 1.0 - lower_mass > 1e-12:
                # bow routes the released mass to the words unseen after h
                bow = released / (1.0 - lower_mass)
                scale = 1.0
            else:
                # seen continuations cover the lower order entirely: no mass
                # can leave, so undo the discount proportionally instead
                bow = 1.0
                scale = 1.0 / (1.0 - released)
            if bow == 0.0:
                logbow = -99.0
            else:
                logbow = math.log10(bow) if bow != 1.0 else 0.0
            for g, c in seen:
                p = scale * (c - discount) / h_total
                if p <= 0:
                    raise ValueError(f"non-positive probability for {vocab.tokens(g)}")
                model.add(g, math.log10(p))
            ent = model.orders[k - 1].get(h)
            if ent is None:
                raise ArpaError(
                    f"history {vocab.tokens(h)} missing at order {k - 1}")
            model.orders[k - 1][h] = (ent[0], logbow)
    return model
