r"""Reading, writing, querying and validating backoff n-gram language models.

Models are exchanged in the plain-text ARPA format::

    \data\
    ngram 1=2
    ngram 2=1

    \1-grams:
    -0.3010300	a	-0.30103
    -0.6989700	b

    \2-grams:
    -0.2520000	a b

    \end\

All scores are base-10 logarithms.  Each n-gram line is
``LOGP<TAB>w1 w2 ... wK[<TAB>LOGBOW]``; a missing backoff field means a
backoff weight of 1 (log 0).  The conventional ``-99`` unigram score for
``<s>`` is preserved verbatim on output.  Files written here use a single
tab between fields and a single space between tokens, with floats printed
to 7 significant digits; the parser also accepts space-separated fields.

A query ``p(w|h)`` follows the usual backoff recursion: return the stored
discounted probability if ``hw`` is stored, otherwise the backoff weight
of ``h`` (1 when ``h`` is unstored or carries no weight) times the
probability under the history shortened by its leftmost token.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, TextIO

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

NGram = tuple  # tuple of token ids


class ArpaError(ValueError):
    """Raised for malformed ARPA input or closure violations."""


class Vocabulary:
    """Bidirectional token-string / integer-id map with special symbols."""

    def __init__(self) -> None:
        self._tokens: list[str] = []
        self._ids: dict[str, int] = {}

    def add(self, token: str) -> int:
        """Insert ``token`` if new; return its id."""
        tid = self._ids.get(token)
        if tid is None:
            tid = len(self._tokens)
            self._ids[token] = tid
            self._tokens.append(token)
        return tid

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"token not in vocabulary: {token!r}") from None

    def get(self, token: str) -> Optional[int]:
        return self._ids.get(token)

    def token(self, tid: int) -> str:
        return self._tokens[tid]

    def tokens(self, ngram: Iterable[int]) -> tuple[str, ...]:
        return tuple(self._tokens[i] for i in ngram)

    def encode(self, tokens: Iterable[str]) -> NGram:
        return tuple(self.id(t) for t in tokens)

    @property
    def bos(self) -> Optional[int]:
        return self._ids.get(BOS)

    @property
    def eos(self) -> Optional[int]:
        return self._ids.get(EOS)

    @property
    def unk(self) -> Optional[int]:
        return self._ids.get(UNK)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __iter__(self) -> Iterator[str]:
        return iter(self._tokens)


class BackoffModel:
    """An order-n backoff model: per order, a map from id-tuple to
    ``(logp, logbow)`` where ``logbow`` is ``None`` when absent."""

    def __init__(self, max_order: int, vocab: Vocabulary) -> None:
        if max_order < 1:
            raise ValueError("max_order must be >= 1")
        self.max_order = max_order
        self.vocab = vocab
        # index 0 unused; orders[k] maps k-gram -> (logp, logbow | None)
        self.orders: list[dict[NGram, tuple[float, Optional[float]]]] = [
            {} for _ in range(max_order + 1)
        ]

    def add(self, ngram: NGram, logp: float, logbow: Optional[float] = None) -> None:
        k = len(ngram)
        table = self.orders[k]
        if ngram in table:
            raise ArpaError(f"duplicate {k}-gram: {self.vocab.tokens(ngram)}")
        table[ngram] = (logp, logbow)

    def entry(self, ngram: NGram) -> Optional[tuple[float, Optional[float]]]:
        k = len(ngram)
        if k < 1 or k > self.max_order:
            return None
        return self.orders[k].get(ngram)

    def logbow(self, history: NGram) -> float:
        """Backoff log-weight of a history; 0.0 when unstored or absent."""
        ent = self.entry(history)
        if ent is None or ent[1] is None:
            return 0.0
        return ent[1]

    def logprob(self, history: NGram, word: int) -> float:
        """log10 p(word | history) by backoff recursion.

        Histories longer than ``max_order - 1`` are truncated to their
        rightmost tokens.  All ids must be in-vocabulary.
        """
        if word < 0 or word >= len(self.vocab):
            raise ValueError(f"word id out of vocabulary: {word}")
        h = tuple(history)
        if len(h) > self.max_order - 1:
            h = h[len(h) - self.max_order + 1:]
        acc = 0.0
        while True:
            ent = self.orders[len(h) + 1].get(h + (word,))
            if ent is not None:
                return acc + ent[0]
            if not h:
                raise ValueError(
                    f"unigram missing for id {word} ({self.vocab.token(word)})")
            acc += self.logbow(h)
            h = h[1:]

    def prob(self, history: NGram, word: int) -> float:
        return 10.0 ** self.logprob(history, word)

    def ngrams(self, order: int) -> Iterator[NGram]:
        return iter(self.orders[order])

    def order_counts(self) -> list[int]:
        """Entry count per order, index 0 = unigrams."""
        return [len(self.orders[k]) for k in range(1, self.max_order + 1)]

    def num_entries(self) -> int:
        return sum(self.order_counts())

    def histories(self) -> Iterator[NGram]:
        """All stored n-grams that act as histories (orders 1..n-1)."""
        for k in range(1, self.max_order):
            yield from self.orders[k]

    def check_closure(self) -> None:
        """Verify that every k-gram's suffix and history are stored."""
        for k in range(2, self.max_order + 1):
            lower = self.orders[k - 1]
            for gram in self.orders[k]:
                if gram[1:] not in lower:
                    raise ArpaError(
                        f"missing suffix entry {self.vocab.tokens(gram[1:])} "
                        f"for {k}-gram {self.vocab.tokens(gram)}")
                if gram[:-1] not in lower:
                    raise ArpaError(
                        f"missing history entry {self.vocab.tokens(gram[:-1])} "
                        f"for {k}-gram {self.vocab.tokens(gram)}")

    def copy(self) -> "BackoffModel":
        out = BackoffModel(self.max_order, self.vocab)
        for k in range(1, self.max_order + 1):
            out.orders[k] = dict(self.orders[k])
        return out

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, BackoffModel)
                and self.max_order == other.max_order
                and self.orders == other.orders)


def _iter_lines(source) -> tuple[TextIO, bool]:
    if isinstance(source, (str, bytes)):
        return io.StringIO(source.decode() if isinstance(source, bytes) else source), True
    return source, False


def parse_arpa(source) -> BackoffModel:
    """Parse an ARPA stream (file object or string) into a BackoffModel.

    The returned model carries its Vocabulary as ``model.vocab``.  Raises
    ArpaError on malformed headers, order-count mismatches, duplicate
    n-grams, unparsable floats, or missing suffix/history entries.
    """
    stream, _ = _iter_lines(source)
    lines = iter(enumerate(stream, start=1))

    for _, line in lines:
        if line.strip() == "\\data\\":
            break
    else:
        raise ArpaError("no \\data\\ section found")

    declared: dict[int, int] = {}
    lineno = 0
    for lineno, line in lines:
        text = line.strip()
        if not text:
            continue
        if text.startswith("ngram "):
            try:
                lhs, rhs = text[6:].split("=")
                declared[int(lhs)] = int(rhs)
            except ValueError:
                raise ArpaError(f"line {lineno}: bad ngram count line: {text!r}")
        else:
            break
    if not declared:
        raise ArpaError("empty \\data\\ section")
    max_order = max(declared)
    if sorted(declared) != list(range(1, max_order + 1)):
        raise ArpaError("non-contiguous ngram orders in \\data\\ section")

    vocab = Vocabulary()
    model = BackoffModel(max_order, vocab)
    # `text` currently holds the first section header
    section = text
    while True:
        if section == "\\end\\":
            break
        if not (section.startswith("\\") and section.endswith("-grams:")):
            raise ArpaError(f"line {lineno}: expected section header, got {section!r}")
        try:
            order = int(section[1:-7])
        except ValueError:
            raise ArpaError(f"line {lineno}: bad section header {section!r}")
        if order not in declared:
            raise ArpaError(f"undeclared order {order} in section header")
        seen, section, lineno = _parse_section(lines, model, vocab, order)
        if seen != declared[order]:
            raise ArpaError(
                f"order-count mismatch: \\data\\ declares ngram {order}={declared[order]}"
                f" but section lists {seen}")

    for order, count in declared.items():
        if len(model.orders[order]) != count:
            raise ArpaError(
                f"order-count mismatch: \\data\\ declares ngram {order}={count}"
                f" but section lists {len(model.orders[order])}")
    model.check_closure()
    return model


def _parse_section(lines, model: BackoffModel, vocab: Vocabulary,
                   order: int) -> tuple[int, str, int]:
    count = 0
    for lineno, raw in lines:
        text = raw.rstrip("\r\n")
        stripped = text.strip()
        if not stripped:
            continue
        if stripped.startswith("\\"):
            return count, stripped, lineno
        if "\t" in text:
            fields = [f for f in text.split("\t") if f != ""]
        else:
            parts = stripped.split()
            if len(parts) == order + 2:
                fields = [parts[0], " ".join(parts[1:-1]), parts[-1]]
            else:
                fields = [parts[0], " ".join(parts[1:])]
        if len(fields) not in (2, 3):
            raise ArpaError(f"line {lineno}: malformed entry: {text!r}")
        try:
            logp = float(fields[0])
        except ValueError:
            raise ArpaError(f"line {lineno}: unparsable probability {fields[0]!r}")
        tokens = fields[1].split(" ")
        if len(tokens) != order:
            raise ArpaError(
                f"line {lineno}: expected {order} tokens, got {len(tokens)}")
        logbow: Optional[float] = None
        if len(fields) == 3:
            try:
                logbow = float(fields[2])
            except ValueError:
                raise ArpaError(f"line {lineno}: unparsable backoff {fields[2]!r}")
        if order == 1:
            gram: NGram = (vocab.add(tokens[0]),)
        else:
            try:
                gram = vocab.encode(tokens)
            except KeyError as exc:
                raise ArpaError(f"line {lineno}: {exc.args[0]}")
        model.add(gram, logp, logbow)
        count += 1
    raise ArpaError("unterminated section: no \\end\\ marker")


def _fmt(x: float) -> str:
    return f"{x:.7g}"


def write_arpa(model: BackoffModel, stream: Optional[TextIO] = None) -> Optional[str]:
    """Serialize a model to ARPA text.

    Entries are sorted by token ids within each order.  When ``stream`` is
    None the text is returned as a string.  Closure violations abort the
    write.
    """
    model.check_closure()
    out = stream if stream is not None else io.StringIO()
    out.write("\\data\\\n")
    for k in range(1, model.max_order + 1):
        out.write(f"ngram {k}={len(model.orders[k])}\n")
    for k in range(1, model.max_order + 1):
        if not model.orders[k]:
            continue
        out.write(f"\n\\{k}-grams:\n")
        for gram in sorted(model.orders[k]):
            logp, logbow = model.orders[k][gram]
            words = " ".join(model.vocab.tokens(gram))
            if logbow is not None:
                out.write(f"{_fmt(logp)}\t{words}\t{_fmt(logbow)}\n")
            else:
                out.write(f"{_fmt(logp)}\t{words}\n")
    out.write("\n\\end\\\n")
    if stream is None:
        return out.getvalue()
    return None


@dataclass
class ValidationReport:
    """Per-history normalization check: deviation of sum_w p(w|h) from 1."""

    deviations: dict[NGram, float]
    tol: float
    method: str
    warnings: list[str] = field(default_factory=list)

    @property
    def flagged(self) -> list[tuple[NGram, float]]:
        return sorted(((h, d) for h, d in self.deviations.items() if d > self.tol),
                      key=lambda it: -it[1])

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return not self.flagged


def validate_model(model: BackoffModel, tol: float = 1e-4,
                   method: str = "auto") -> ValidationReport:
    """Check that every stored history's conditional distribution sums to 1.

    ``<s>`` is never a predicted word, so it is excluded from the sums.
    ``method`` is ``dense`` (explicit per-history sums over the
    vocabulary), ``recursive`` (the same values through the hierarchical
    normalizer recursion, linear in the model size), or ``auto`` which
    picks dense for small vocabularies.
    """
    vocab = model.vocab
    n_hist = sum(len(model.orders[k]) for k in range(1, model.max_order))
    if method == "auto":
        method = "dense" if len(vocab) <= 1000 and (n_hist + 1) * len(vocab) <= 2_000_000 \
            else "recursive"
    warnings = []
    for k in range(1, model.max_order + 1):
        for gram, (logp, _) in model.orders[k].items():
            if logp > 0:
                warnings.append(
                    f"positive log-probability at {vocab.tokens(gram)}: {logp}")
    if method == "dense":
        bos = vocab.bos
        words = [w for w in range(len(vocab)) if w != bos]
        deviations = {}
        for k in range(0, model.max_order):
            for h in (model.orders[k] if k else [()]):
                total = math.fsum(model.prob(h, w) for w in words)
                deviations[h] = abs(total - 1.0)
    elif method == "recursive":
        from .mdi import PackedModel, get_kernels
        packed = PackedModel(model, ())
        kern = get_kernels()
        _, z0, z, _ = kern.prepare(packed, None)
        deviations = {(): abs(z0 - 1.0)}
        for k in range(1, model.max_order):
            for gram, row in packed.index[k].items():
                if gram in model.orders[k]:
                    deviations[gram] = abs(z[k][row] - 1.0)
    else:
        raise ValueError(f"unknown validation method: {method}")
    return ValidationReport(deviations=deviations, tol=tol, method=method,
                            warnings=warnings)
