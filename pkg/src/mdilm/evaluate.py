"""Model quality measurement and the linear-interpolation baseline.

Perplexity follows the common toolkit convention: ``<s>`` is context
only, ``</s>`` is a scored event, and the reported figure is 10 to the
negative average log10 probability per scored event.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .arpa import UNK, BackoffModel, NGram, Vocabulary
from .oracle import DenseModel
from .stats import HistoryDistribution

OOV_POLICIES = ("skip", "unk", "fail")


@dataclass
class PerplexityReport:
    log10_total: float
    words: int
    oov: int
    policy: str

    @property
    def perplexity(self) -> float:
        if self.words == 0:
            return math.inf
        return 10.0 ** (-self.log10_total / self.words)

    def merge(self, other: "PerplexityReport") -> "PerplexityReport":
        if other.policy != self.policy:
            raise ValueError("cannot merge reports with different OOV policies")
        return PerplexityReport(self.log10_total + other.log10_total,
                                self.words + other.words,
                                self.oov + other.oov, self.policy)

    def tsv(self) -> str:
        return (f"{self.log10_total:.6f}\t{self.words}\t"
                f"{self.perplexity:.6g}\t{self.oov}")


def perplexity(model: BackoffModel, lines: Iterable[str],
               oov_policy: Optional[str] = None) -> PerplexityReport:
    """Corpus perplexity of a model over sentence-per-line text.

    OOV handling: ``unk`` substitutes ``<unk>`` (event scored, context
    kept), ``skip`` drops the event and clears the context through it,
    ``fail`` raises.  The default is ``unk`` when the model has ``<unk>``,
    else ``skip``.
    """
    vocab = model.vocab
    if oov_policy is None:
        oov_policy = "unk" if vocab.unk is not None else "skip"
    if oov_policy not in OOV_POLICIES:
        raise ValueError(f"unknown OOV policy {oov_policy!r}")
    if oov_policy == "unk" and vocab.unk is None:
        raise ValueError("model has no <unk>; cannot apply the unk policy")
    bos, eos = vocab.bos, vocab.eos
    if eos is None:
        raise ValueError("model has no </s>; cannot score sentence ends")
    total = 0.0
    words = 0
    oov = 0
    max_hist = model.max_order - 1
    for line in lines:
        tokens = line.split()
        if not tokens:
            continue
        context: tuple = (bos,) if bos is not None and max_hist else ()
        for tok in tokens + [None]:
            if tok is None:
                tid = eos
            else:
                tid = vocab.get(tok)
                if tid is None:
                    oov += 1
                    if oov_policy == "fail":
                        raise ValueError(f"out-of-vocabulary token: {tok!r}")
                    if oov_policy == "unk":
                        tid = vocab.unk
                    else:
                        context = ()
                        continue
            total += model.logprob(context, tid)
            words += 1
            if max_hist:
                context = (context + (tid,))[-max_hist:]
    if words == 0:
        raise ValueError("no events scored; empty corpus")
    return PerplexityReport(total, words, oov, oov_policy)


def conditional_kl(p: DenseModel, q: DenseModel,
                   history_dist: HistoryDistribution) -> float:
    """History-weighted KL divergence sum_h w(h) sum_w p(w|h) log(p/q), in
    nats; zero iff the models agree on the weighted support."""
    if p.num_words != q.num_words or p.order != q.order:
        raise ValueError("models must share vocabulary size and order")
    total = 0.0
    for h, ph in history_dist.items():
        pr = p.row(h)
        qr = q.row(h)
        mask = pr > 0
        if np.any(qr[mask] <= 0):
            raise ValueError("q is zero where p is positive")
        total += ph * float(np.sum(pr[mask] * np.log(pr[mask] / qr[mask])))
    return total


def _string_entries(model: BackoffModel):
    for k in range(1, model.max_order + 1):
        for gram in model.orders[k]:
            yield model.vocab.tokens(gram)


def _string_prob(model: BackoffModel, tokens: tuple[str, ...]) -> float:
    """p(last | rest) with out-of-vocabulary tokens contributing zero
    probability (and breaking history matches, as an unseen id would)."""
    vocab = model.vocab
    word = vocab.get(tokens[-1])
    if word is None:
        return 0.0
    hist = [vocab.get(t) for t in tokens[:-1]]
    logp = 0.0
    start = 0
    for i, tid in enumerate(hist):
        if tid is None:
            start = i + 1
    h = tuple(hist[start:])
    max_hist = model.max_order - 1
    if len(h) > max_hist:
        h = h[len(h) - max_hist:] if max_hist else ()
    return 10.0 ** model.logprob(h, word)


def linear_interpolate(a: BackoffModel, b: BackoffModel,
                       weight: float) -> BackoffModel:
    """Probability-space mixture weight*a + (1-weight)*b as a backoff model.

    The entry set is the union of both models' stored n-grams over the
    union vocabulary; each entry's probability is the pointwise mixture
    (a model contributes zero beyond its own vocabulary), and backoff
    weights are recomputed bottom-up so every history normalizes exactly.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must be in [0, 1]")
    n = max(a.max_order, b.max_order)
    vocab = Vocabulary()
    for tok in a.vocab:
        vocab.add(tok)
    for tok in b.vocab:
        vocab.add(tok)
    shared = set(a.vocab) & set(b.vocab)
    if not shared:
        raise ValueError("disjoint vocabularies; nothing to interpolate")

    def mix(tokens: tuple[str, ...]) -> float:
        return (weight * _string_prob(a, tokens)
                + (1.0 - weight) * _string_prob(b, tokens))

    entries: list[set] = [set() for _ in range(n + 1)]
    for src in (a, b):
        for toks in _string_entries(src):
            entries[len(toks)].add(toks)

    out = BackoffModel(n, vocab)
    bos = vocab.bos
    for k in range(1, n + 1):
        by_history: dict[tuple, list[tuple]] = {}
        for toks in entries[k]:
            by_history.setdefault(toks[:-1], []).append(toks)
        for toks in sorted(entries[k]):
            p = mix(toks)
            gram = vocab.encode(toks)
            if k == 1 and bos is not None and gram[0] == bos:
                out.add(gram, -99.0)
            elif p <= 0.0:
                # only at weight 0 or 1 for entries exclusive to the
                # zero-weighted model; keep them as sentinel entries so the
                # union entry set stays closed
                out.add(gram, -99.0)
            else:
                out.add(gram, math.log10(p))
        if k < 2:
            continue
        # recompute the backoff weight of every history at order k-1
        for hist_toks, conts in sorted(by_history.items()):
            stored_mass = math.fsum(mix(t) for t in conts)
            lower_mass = math.fsum(
                10.0 ** out.logprob(vocab.encode(hist_toks)[1:], vocab.encode(t)[-1])
                for t in conts)
            gram = vocab.encode(hist_toks)
            logp, _ = out.orders[k - 1][gram]
            if 1.0 - lower_mass > 1e-12:
                bow = (1.0 - stored_mass) / (1.0 - lower_mass)
                out.orders[k - 1][gram] = (logp, math.log10(bow))
            else:
                # stored continuations cover the lower order: rescale them
                scale = 1.0 / stored_mass
                for t in conts:
                    g = vocab.encode(t)
                    lp, lb = out.orders[k][g]
                    out.orders[k][g] = (lp + math.log10(scale), lb)
                out.orders[k - 1][gram] = (logp, 0.0)
    return out
