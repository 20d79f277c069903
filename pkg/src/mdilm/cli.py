"""Command line front end.

Subcommands wire the pipeline together: count n-grams, select constraints,
adapt a model (either direction), interpolate, evaluate, validate, and
benchmark.  Exit codes: 0 success/converged, 2 usage error, 3 data error,
4 non-convergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench as bench_mod
from .arpa import ArpaError, parse_arpa, validate_model, write_arpa
from .evaluate import OOV_POLICIES, linear_interpolate, perplexity
from .mdi import (AdaptationError, available_backends, build_adapted_model,
                  compute_marginals, run_gis, ScalingField)
from .stats import (Constraint, ConstraintSet, count_ngrams,
                    history_distribution, select_constraints)

logger = logging.getLogger("mdilm")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NOCONV = 4


def _read_lines(path: str):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _load_model(path: str):
    with open(path, encoding="utf-8") as fh:
        return parse_arpa(fh)


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _parse_thresholds(text: str, order: int) -> list[int]:
    values = [int(v) for v in text.split(",")]
    if len(values) != order:
        raise ValueError(f"--thresholds needs {order} comma-separated values "
                         f"for order {order}, got {len(values)}")
    return values


def _log_stream(args):
    if args.log is None:
        return sys.stderr, False
    return open(args.log, "w", encoding="utf-8"), True


def cmd_count(args) -> int:
    counts = count_ngrams(_read_lines(args.corpus), args.order)
    out, close = _open_out(args.out)
    try:
        for k in range(1, counts.n + 1):
            for gram in sorted(counts.counts[k]):
                toks = " ".join(counts.vocab.tokens(gram))
                out.write(f"{k}\t{toks}\t{counts.counts[k][gram]}\n")
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_constraints(args) -> int:
    counts = count_ngrams(_read_lines(args.corpus), args.order)
    model_vocab = _load_model(args.lm).vocab if args.lm else None
    thresholds = _parse_thresholds(args.thresholds, args.order)
    cs = select_constraints(counts, thresholds, model_vocab)
    per_order = cs.order_counts()
    for k in range(1, args.order + 1):
        print(f"order {k}: {per_order.get(k, 0)} constraints "
              f"(threshold {thresholds[k - 1]})", file=sys.stderr)
    out, close = _open_out(args.out)
    try:
        cs.to_tsv(out)
    finally:
        if close:
            out.close()
    return EXIT_OK


def _history_dist_for(args, model, order):
    if args.history_from == "lm-counts":
        raise SystemExit2("--history-from lm-counts is reserved and not "
                          "implemented; use --history-from corpus")
    corpus = args.history_corpus or args.in_corpus
    if corpus is None:
        raise ValueError("need --in-corpus or --history-corpus for the "
                         "history distribution")
    counts = count_ngrams(_read_lines(corpus), order, model.vocab)
    return history_distribution(counts)


class SystemExit2(Exception):
    """Usage error discovered after argparse."""


def _finish_adaptation(args, model, cs, hd) -> int:
    log, close_log = _log_stream(args)
    try:
        state, table = run_gis(model, cs, hd, gamma=args.gamma, tol=args.tol,
                               max_iters=args.max_iters, log_stream=log)
    finally:
        if close_log:
            log.close()
    adapted = build_adapted_model(model, state.field, table)
    out, close = _open_out(args.out)
    try:
        write_arpa(adapted, out)
    finally:
        if close:
            out.close()
    print(f"status={state.status} iterations={state.iteration} "
          f"max_log_ratio={state.max_log_ratio:.3e} constraints={len(cs)}",
          file=sys.stderr)
    return EXIT_OK if state.converged else EXIT_NOCONV


def cmd_adapt(args) -> int:
    model = _load_model(args.lm)
    order = model.max_order
    if args.constraints and args.thresholds:
        raise SystemExit2("--constraints and --thresholds are mutually "
                          "exclusive")
    if args.constraints:
        with open(args.constraints, encoding="utf-8") as fh:
            cs = ConstraintSet.from_tsv(fh, model.vocab)
    else:
        if args.in_corpus is None or args.thresholds is None:
            raise SystemExit2("adapt needs either --constraints or "
                              "--in-corpus with --thresholds")
        counts = count_ngrams(_read_lines(args.in_corpus), order, model.vocab)
        thresholds = _parse_thresholds(args.thresholds, order)
        cs = select_constraints(counts, thresholds, model.vocab)
        per_order = cs.order_counts()
        for k in range(1, order + 1):
            print(f"order {k}: {per_order.get(k, 0)} constraints "
                  f"(threshold {thresholds[k - 1]})", file=sys.stderr)
    hd = _history_dist_for(args, model, order)
    return _finish_adaptation(args, model, cs, hd)


def cmd_first_pass_adapt(args) -> int:
    model = _load_model(args.lm)
    reference = _load_model(args.reference)
    n_in, n_ref = model.max_order, reference.max_order
    if n_in > n_ref:
        raise ValueError(f"in-domain order {n_in} exceeds reference order "
                         f"{n_ref}")
    bos = model.vocab.bos
    eos = model.vocab.eos
    ngrams = []
    dropped_vocab = 0
    for k in range(1, n_in + 1):
        for gram in sorted(model.orders[k]):
            if bos is not None and bos in gram and not (
                    k == n_ref and gram[0] == bos and bos not in gram[1:]):
                continue
            if eos is not None and eos in gram[:-1]:
                continue
            toks = model.vocab.tokens(gram)
            ref_ids = tuple(reference.vocab.get(t) for t in toks)
            if any(i is None for i in ref_ids):
                dropped_vocab += 1
                continue
            ngrams.append((gram, ref_ids))
    if dropped_vocab:
        logger.warning("%d entries outside the reference vocabulary are left "
                       "unconstrained", dropped_vocab)
    ref_corpus = args.history_corpus or args.in_corpus
    if ref_corpus is None:
        raise SystemExit2("first-pass-adapt needs --in-corpus (or "
                          "--history-corpus) for the history distribution")
    ref_counts = count_ngrams(_read_lines(ref_corpus), n_ref, reference.vocab)
    ref_hd = history_distribution(ref_counts)
    probe = ConstraintSet(reference.vocab,
                          [Constraint(r, 0.5, 1) for _, r in ngrams])
    targets = compute_marginals(reference, ScalingField(), None, ref_hd, probe)
    items = []
    dropped_zero = 0
    for (gram, _), t in zip(ngrams, targets):
        if t <= 1e-12:
            dropped_zero += 1
            continue
        items.append(Constraint(gram, float(t), 0))
    if dropped_zero:
        logger.warning("dropped %d entries with zero reference marginal",
                       dropped_zero)
    cs = ConstraintSet(model.vocab, items)
    hd = _history_dist_for(args, model, n_in)
    print(f"constraining {len(cs)} of {model.num_entries()} entries toward "
          f"the reference marginals", file=sys.stderr)
    return _finish_adaptation(args, model, cs, hd)


def cmd_interpolate(args) -> int:
    a = _load_model(args.lm_a)
    b = _load_model(args.lm_b)
    mixed = linear_interpolate(a, b, args.weight)
    out, close = _open_out(args.out)
    try:
        write_arpa(mixed, out)
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_ppl(args) -> int:
    model = _load_model(args.lm)
    report = perplexity(model, _read_lines(args.corpus), args.oov)
    print("logprob\twords\tppl\toov")
    print(report.tsv())
    return EXIT_OK


def cmd_validate(args) -> int:
    model = _load_model(args.lm)
    report = validate_model(model, tol=args.tol)
    print(f"histories checked: {len(report.deviations)}")
    print(f"max deviation: {report.max_deviation:.3e} (method {report.method})")
    for warning in report.warnings[:20]:
        print(f"note: {warning}")
    if report.ok:
        print("ok")
        return EXIT_OK
    for h, d in report.flagged[:50]:
        toks = " ".join(model.vocab.tokens(h)) or "<empty>"
        print(f"FLAG\t{toks}\t{d:.6e}")
    print(f"{len(report.flagged)} histories exceed tolerance {report.tol}")
    return EXIT_DATA


def cmd_bench(args) -> int:
    entries = [int(float(v)) for v in args.entries.split(",")]
    ks = [int(float(v)) for v in args.num_constraints.split(",")]
    if args.backend == "both":
        backends = tuple(available_backends())
    else:
        backends = (args.backend,)
    out, close = _open_out(args.out)
    try:
        if args.backend == "both":
            out.write("entries\tK\tseconds\tbackend\n")
        else:
            out.write("entries\tK\tseconds\n")
        for result in bench_mod.run_grid(entries, ks, seed=args.seed,
                                         order=args.order, backends=backends,
                                         repeats=args.repeats):
            if args.backend == "both":
                out.write(f"{result.entries}\t{result.num_constraints}\t"
                          f"{result.seconds:.6f}\t{result.backend}\n")
            else:
                out.write(f"{result.entries}\t{result.num_constraints}\t"
                          f"{result.seconds:.6f}\n")
    finally:
        if close:
            out.close()
    return EXIT_OK


def _add_shared(sub, *flags):
    if "order" in flags:
        sub.add_argument("--order", type=int, default=3,
                         help="n-gram order (default 3)")
    if "gis" in flags:
        sub.add_argument("--gamma", type=float, default=1.0,
                         help="step size; below 1 damps the update "
                              "(recommended for dense nested constraint sets)")
        sub.add_argument("--tol", type=float, default=1e-4,
                         help="stop when max |log target/current| < tol")
        sub.add_argument("--max-iters", type=int, default=200)
        sub.add_argument("--log", default=None,
                         help="iteration log TSV path (default: stderr)")
        sub.add_argument("--history-from", choices=("corpus", "lm-counts"),
                         default="corpus")
        sub.add_argument("--history-corpus", default=None,
                         help="corpus for the history distribution "
                              "(default: the in-domain corpus)")
    sub.add_argument("--threads", type=int, default=0,
                     help="reserved; kernels run single-threaded, results "
                          "are identical for any value")
    sub.add_argument("--seed", type=int, default=0)


def build_parser() -> tuple[argparse.ArgumentParser, list]:
    parser = argparse.ArgumentParser(
        prog="mdilm",
        description="Adapt backoff n-gram language models to in-domain "
                    "marginal constraints.")
    parser.add_argument("--config", default=None,
                        help="key = value file of flag defaults")
    commands = parser.add_subparsers(dest="command", required=True)
    subparsers = []

    p = commands.add_parser("count", help="count n-grams from a corpus")
    subparsers.append(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    _add_shared(p, "order")
    p.set_defaults(func=cmd_count)

    p = commands.add_parser("constraints",
                            help="select count-thresholded constraints")
    subparsers.append(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--thresholds", required=True,
                   help="per-order counts, e.g. 5,3,2")
    p.add_argument("--lm", default=None,
                   help="drop constraints outside this model's vocabulary")
    p.add_argument("--out", default=None)
    _add_shared(p, "order")
    p.set_defaults(func=cmd_constraints)

    p = commands.add_parser("adapt",
                            help="adapt a model to in-domain marginals")
    subparsers.append(p)
    p.add_argument("--lm", required=True, help="out-of-domain ARPA model")
    p.add_argument("--constraints", default=None, help="constraint TSV")
    p.add_argument("--in-corpus", default=None,
                   help="in-domain corpus (constraint source when no "
                        "--constraints, history source)")
    p.add_argument("--thresholds", default=None)
    p.add_argument("--out", required=True)
    _add_shared(p, "gis")
    p.set_defaults(func=cmd_adapt)

    p = commands.add_parser("first-pass-adapt",
                            help="pull a small model toward a reference "
                                 "model's marginals, keeping its size")
    subparsers.append(p)
    p.add_argument("--lm", required=True, help="in-domain ARPA model")
    p.add_argument("--reference", required=True,
                   help="reference (e.g. interpolated) ARPA model")
    p.add_argument("--in-corpus", default=None)
    p.add_argument("--out", required=True)
    _add_shared(p, "gis")
    p.set_defaults(func=cmd_first_pass_adapt)

    p = commands.add_parser("interpolate", help="linear mixture of two models")
    subparsers.append(p)
    p.add_argument("--lm-a", required=True)
    p.add_argument("--lm-b", required=True)
    p.add_argument("--weight", type=float, required=True,
                   help="weight of --lm-a in [0, 1]")
    p.add_argument("--out", required=True)
    _add_shared(p)
    p.set_defaults(func=cmd_interpolate)

    p = commands.add_parser("ppl", help="corpus perplexity")
    subparsers.append(p)
    p.add_argument("--lm", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--oov", choices=OOV_POLICIES, default=None,
                   help="default: unk when the model has <unk>, else skip")
    _add_shared(p)
    p.set_defaults(func=cmd_ppl)

    p = commands.add_parser("validate", help="normalization check")
    subparsers.append(p)
    p.add_argument("--lm", required=True)
    p.add_argument("--tol", type=float, default=1e-4)
    _add_shared(p)
    p.set_defaults(func=cmd_validate)

    p = commands.add_parser("bench",
                            help="per-iteration runtime on synthetic models")
    subparsers.append(p)
    p.add_argument("--entries", required=True,
                   help="comma-separated model sizes, e.g. 1e5,2e5")
    p.add_argument("--num-constraints", default="1000",
                   help="comma-separated constraint counts")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--backend", default="auto",
                   choices=("auto", "both", *available_backends()))
    p.add_argument("--out", default=None)
    _add_shared(p, "order")
    p.set_defaults(func=cmd_bench)
    return parser, subparsers


def _load_config(path: str) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8")
                                 .splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value.strip("\"'")
    return values


_TYPED_KEYS = {"order": int, "gamma": float, "tol": float, "max_iters": int,
               "weight": float, "threads": int, "seed": int, "repeats": int}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser, subparsers = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" in argv:
        at = argv.index("--config")
        try:
            config = _load_config(argv[at + 1])
        except (OSError, ValueError, IndexError) as exc:
            print(f"error: bad --config: {exc}", file=sys.stderr)
            return EXIT_USAGE
        typed = {k: (_TYPED_KEYS[k](v) if k in _TYPED_KEYS else v)
                 for k, v in config.items()}
        for sub in subparsers:
            sub.set_defaults(**{k: v for k, v in typed.items()
                                if any(a.dest == k for a in sub._actions)})
        del argv[at:at + 2]
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AdaptationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (ArpaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
