import math

import numpy as np
import pytest

from mdilm.arpa import BackoffModel, Vocabulary
from mdilm.stats import (Constraint, ConstraintSet, HistoryDistribution,
                         count_ngrams, estimate_backoff_lm)


def build_model(unigrams, bigrams=None, trigrams=None, bows=None):
    """Hand-build a model from linear probabilities.

    unigrams: {token: p}; bigrams/trigrams: {token-tuple: p*};
    bows: {token-tuple: bow}.
    """
    vocab = Vocabulary()
    for tok in unigrams:
        vocab.add(tok)
    order = 1 + (bigrams is not None) + (trigrams is not None)
    model = BackoffModel(order, vocab)
    for tok, p in unigrams.items():
        model.add((vocab.id(tok),), -99.0 if p == "bos" else math.log10(p))
    for table, k in ((bigrams, 2), (trigrams, 3)):
        if table is None:
            continue
        for toks, p in table.items():
            model.add(vocab.encode(toks), math.log10(p))
    for toks, b in (bows or {}).items():
        gram = vocab.encode(toks if isinstance(toks, tuple) else (toks,))
        logp, _ = model.orders[len(gram)][gram]
        model.orders[len(gram)][gram] = (logp, math.log10(b))
    return model


@pytest.fixture
def m1():
    """Two-word model: p(a)=0.6, p(b)=0.4, p*(b|a)=0.7, bow(a)=0.5."""
    return build_model({"a": 0.6, "b": 0.4}, bigrams={("a", "b"): 0.7},
                       bows={"a": 0.5})


M1_ARPA = """\
\\data\\
ngram 1=2
ngram 2=1

\\1-grams:
-0.2218487\ta\t-0.30103
-0.39794\tb

\\2-grams:
-0.1549020\ta b

\\end\\
"""


@pytest.fixture
def m1_text():
    return M1_ARPA


def random_corpus(rng, num_words, num_sentences=40, max_len=8, zipf=1.3):
    """Synthetic sentences over a small alphabet with a skewed unigram law."""
    alphabet = [f"w{i}" for i in range(num_words)]
    weights = np.array([1.0 / (i + 1) ** zipf for i in range(num_words)])
    weights /= weights.sum()
    lines = []
    for _ in range(num_sentences):
        length = int(rng.integers(1, max_len + 1))
        lines.append(" ".join(rng.choice(alphabet, size=length, p=weights)))
    return lines


def random_model(rng, num_words=4, order=2, num_sentences=40):
    """A small normalized backoff model estimated from a random corpus."""
    lines = random_corpus(rng, num_words, num_sentences)
    counts = count_ngrams(lines, order)
    discount = float(rng.uniform(0.2, 0.8))
    return estimate_backoff_lm(counts, discount), counts


def random_field_ngrams(rng, model, max_per_order=3):
    """Random stored n-grams usable as constraint keys, skipping any that
    could not name a non-empty full-order suffix set."""
    bos, eos = model.vocab.bos, model.vocab.eos
    n = model.max_order
    picks = []
    for k in range(1, n + 1):
        grams = [g for g in model.orders[k]
                 if g[-1] != bos
                 and not (k < n and bos in g)
                 and not (k == n and bos in g[1:])
                 and eos not in g[:-1]]
        if not grams:
            continue
        take = min(len(grams), int(rng.integers(1, max_per_order + 1)))
        idx = rng.choice(len(grams), size=take, replace=False)
        picks.extend(grams[i] for i in idx)
    return picks


def random_history_dist(rng, model, counts):
    """Random sparse distribution over seen full-length histories."""
    n = model.max_order
    if n == 1:
        return HistoryDistribution({(): 1.0})
    seen = sorted({g[:-1] for g in counts.counts[n]})
    take = min(len(seen), int(rng.integers(1, len(seen) + 1)))
    idx = rng.choice(len(seen), size=take, replace=False)
    chosen = [seen[i] for i in sorted(idx)]
    w = rng.uniform(0.2, 1.0, size=len(chosen))
    w /= w.sum()
    return HistoryDistribution({h: float(p) for h, p in zip(chosen, w)})


def feasible_targets_from_witness(rng, dense, history_dist, ngrams):
    """Targets realized by a randomly perturbed version of the dense model,
    so the constraint set is consistent by construction."""
    witness = dense.copy()
    noise = rng.uniform(0.5, 1.5, size=witness.table.shape)
    witness.table = witness.table * noise
    axis = witness.order - 1
    witness.table /= witness.table.sum(axis=axis, keepdims=True)
    targets = []
    for s in ngrams:
        total = 0.0
        for h, ph in history_dist.items():
            for w in range(witness.num_words):
                full = tuple(h) + (w,)
                if full[len(full) - len(s):] == s:
                    total += ph * witness.prob(h, w)
        targets.append(total)
    return targets, witness
