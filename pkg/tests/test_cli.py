import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mdilm.arpa import parse_arpa, write_arpa
from mdilm.cli import main
from mdilm.oracle import expand_dense
from mdilm.stats import count_ngrams, estimate_backoff_lm

from conftest import M1_ARPA, random_corpus


@pytest.fixture
def workdir(tmp_path):
    rng = np.random.default_rng(21)
    out_lines = random_corpus(rng, 10, num_sentences=80, max_len=12, zipf=1.1)
    in_lines = random_corpus(rng, 10, num_sentences=50, max_len=12, zipf=1.7)
    (tmp_path / "out_corpus.txt").write_text("\n".join(out_lines))
    (tmp_path / "in_corpus.txt").write_text("\n".join(in_lines))
    model = estimate_backoff_lm(count_ngrams(out_lines, 2), 0.6)
    (tmp_path / "out.arpa").write_text(write_arpa(model))
    model3 = estimate_backoff_lm(count_ngrams(out_lines, 3), 0.6)
    (tmp_path / "out3.arpa").write_text(write_arpa(model3))
    (tmp_path / "m1.arpa").write_text(M1_ARPA)
    return tmp_path


def run(args):
    return main([str(a) for a in args])


def test_count_writes_expected_tsv(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("a b\n")
    assert run(["count", "--corpus", tmp_path / "c.txt", "--order", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6  # 3 unigrams + 3 bigrams
    assert all(len(l.split("\t")) == 3 for l in lines)


def test_count_order_one(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("a b\n")
    assert run(["count", "--corpus", tmp_path / "c.txt", "--order", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(l.startswith("1\t") for l in lines)


def test_missing_file_is_data_error(capsys):
    assert run(["count", "--corpus", "/nonexistent/x.txt"]) == 3
    assert "error" in capsys.readouterr().err


def test_constraints_reports_per_order_counts(workdir, capsys):
    code = run(["constraints", "--corpus", workdir / "in_corpus.txt",
                "--order", "2", "--thresholds", "10,5",
                "--lm", workdir / "out.arpa",
                "--out", workdir / "cons.tsv"])
    assert code == 0
    err = capsys.readouterr().err
    assert "order 1:" in err and "order 2:" in err
    header = (workdir / "cons.tsv").read_text().splitlines()[0]
    assert header == "#mdi-constraints v1"


def test_adapt_no_constraints_is_identity(workdir, capsys):
    cons = workdir / "empty.tsv"
    cons.write_text("#mdi-constraints v1\n")
    code = run(["adapt", "--lm", workdir / "out.arpa",
                "--constraints", cons,
                "--in-corpus", workdir / "in_corpus.txt",
                "--out", workdir / "adapted.arpa"])
    assert code == 0
    original = parse_arpa((workdir / "out.arpa").read_text())
    adapted = parse_arpa((workdir / "adapted.arpa").read_text())
    np.testing.assert_allclose(expand_dense(adapted).table,
                               expand_dense(original).table, rtol=1e-6)


def test_adapt_from_corpus_thresholds(workdir, capsys):
    code = run(["adapt", "--lm", workdir / "out.arpa",
                "--in-corpus", workdir / "in_corpus.txt",
                "--thresholds", "20,10",
                "--max-iters", "300",
                "--out", workdir / "adapted.arpa",
                "--log", workdir / "iters.tsv"])
    assert code in (0, 4)
    log_lines = (workdir / "iters.tsv").read_text().strip().splitlines()
    assert log_lines, "iteration log must not be empty"
    first = log_lines[0].split("\t")
    assert int(first[0]) == 1 and float(first[1]) > 0
    err = capsys.readouterr().err
    assert "status=" in err


def test_adapt_trigram_threshold_flag_reports_counts(workdir, capsys):
    code = run(["adapt", "--lm", workdir / "out3.arpa",
                "--in-corpus", workdir / "in_corpus.txt",
                "--thresholds", "5,3,2", "--gamma", "0.5",
                "--out", workdir / "a3.arpa"])
    assert code in (0, 4)
    err = capsys.readouterr().err
    assert "order 1:" in err and "order 2:" in err and "order 3:" in err
    assert "(threshold 5)" in err and "(threshold 2)" in err


def test_adapt_requires_constraint_source(workdir):
    assert run(["adapt", "--lm", workdir / "out.arpa",
                "--out", workdir / "x.arpa"]) == 2


def test_adapt_rejects_conflicting_constraint_sources(workdir):
    cons = workdir / "empty.tsv"
    cons.write_text("#mdi-constraints v1\n")
    assert run(["adapt", "--lm", workdir / "out.arpa",
                "--constraints", cons, "--thresholds", "5,3",
                "--in-corpus", workdir / "in_corpus.txt",
                "--out", workdir / "x.arpa"]) == 2


def test_adapt_history_from_lm_counts_rejected(workdir):
    cons = workdir / "empty.tsv"
    cons.write_text("#mdi-constraints v1\n")
    assert run(["adapt", "--lm", workdir / "out.arpa",
                "--constraints", cons,
                "--in-corpus", workdir / "in_corpus.txt",
                "--history-from", "lm-counts",
                "--out", workdir / "x.arpa"]) == 2


def test_first_pass_adapt_preserves_size(workdir, capsys):
    in_lines = (workdir / "in_corpus.txt").read_text().splitlines()
    in_model = estimate_backoff_lm(count_ngrams(in_lines, 2), 0.5)
    (workdir / "in.arpa").write_text(write_arpa(in_model))
    code = run(["interpolate", "--lm-a", workdir / "in.arpa",
                "--lm-b", workdir / "out.arpa", "--weight", "0.5",
                "--out", workdir / "mix.arpa"])
    assert code == 0
    code = run(["first-pass-adapt", "--lm", workdir / "in.arpa",
                "--reference", workdir / "mix.arpa",
                "--in-corpus", workdir / "in_corpus.txt",
                "--gamma", "0.5", "--max-iters", "400",
                "--out", workdir / "fp.arpa"])
    assert code in (0, 4)
    adapted = parse_arpa((workdir / "fp.arpa").read_text())
    assert adapted.order_counts() == in_model.order_counts()


def test_first_pass_reference_equals_input_is_fixed_point(workdir):
    in_lines = (workdir / "in_corpus.txt").read_text().splitlines()
    in_model = estimate_backoff_lm(count_ngrams(in_lines, 2), 0.5)
    (workdir / "in.arpa").write_text(write_arpa(in_model))
    code = run(["first-pass-adapt", "--lm", workdir / "in.arpa",
                "--reference", workdir / "in.arpa",
                "--in-corpus", workdir / "in_corpus.txt",
                "--out", workdir / "fp.arpa"])
    assert code == 0
    adapted = parse_arpa((workdir / "fp.arpa").read_text())
    dense_in = expand_dense(in_model)
    dense_fp = expand_dense(adapted)
    np.testing.assert_allclose(dense_fp.table, dense_in.table, atol=1e-6)


def test_interpolate_weight_one_equals_first(workdir):
    code = run(["interpolate", "--lm-a", workdir / "m1.arpa",
                "--lm-b", workdir / "m1.arpa", "--weight", "1.0",
                "--out", workdir / "mix.arpa"])
    assert code == 0
    m1 = parse_arpa(M1_ARPA)
    mix = parse_arpa((workdir / "mix.arpa").read_text())
    np.testing.assert_allclose(expand_dense(mix).table,
                               expand_dense(m1).table, rtol=1e-6)


def test_ppl_output_format(workdir, capsys):
    assert run(["ppl", "--lm", workdir / "out.arpa",
                "--corpus", workdir / "in_corpus.txt"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "logprob\twords\tppl\toov"
    fields = out[1].split("\t")
    assert len(fields) == 4 and float(fields[2]) > 1


def test_validate_ok_and_flagged(workdir, capsys, tmp_path):
    assert run(["validate", "--lm", workdir / "out.arpa"]) == 0
    broken = M1_ARPA.replace("-0.30103\n", "-0.2218487\n")  # bow(a) 0.5 -> 0.6
    bad = tmp_path / "bad.arpa"
    bad.write_text(broken)
    assert run(["validate", "--lm", bad]) == 3
    assert "FLAG" in capsys.readouterr().out


def test_bench_grid_and_determinism(workdir, capsys):
    args = ["bench", "--entries", "3000", "--num-constraints", "50",
            "--order", "2", "--repeats", "1", "--seed", "7"]
    assert run(args) == 0
    first = capsys.readouterr().out.splitlines()
    assert run(args) == 0
    second = capsys.readouterr().out.splitlines()
    assert first[0] == "entries\tK\tseconds"
    e1, k1, _ = first[1].split("\t")
    e2, k2, _ = second[1].split("\t")
    assert (e1, k1) == (e2, k2)  # same seed, same synthetic model
    assert abs(int(e1) - 3000) < 1500


def test_config_file_defaults(workdir, capsys):
    cfg = workdir / "run.cfg"
    cfg.write_text("order = 1\n# comment\n")
    (workdir / "c.txt").write_text("a b\n")
    assert run(["--config", cfg, "count", "--corpus", workdir / "c.txt"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(l.startswith("1\t") for l in lines)


def test_cli_adapt_matches_library_run(workdir):
    # the subcommand is plumbing over run_gis/build_adapted_model; outputs
    # must match the direct library calls to serialization precision
    from mdilm.mdi import build_adapted_model, run_gis
    from mdilm.stats import (ConstraintSet, count_ngrams,
                             history_distribution, select_constraints)
    code = run(["adapt", "--lm", workdir / "out.arpa",
                "--in-corpus", workdir / "in_corpus.txt",
                "--thresholds", "20,10", "--gamma", "0.5",
                "--max-iters", "300",
                "--out", workdir / "cli.arpa"])
    assert code in (0, 4)
    model = parse_arpa((workdir / "out.arpa").read_text())
    in_lines = (workdir / "in_corpus.txt").read_text().splitlines()
    counts = count_ngrams(in_lines, model.max_order, model.vocab)
    cs = select_constraints(counts, [20, 10], model.vocab)
    hd = history_distribution(counts)
    state, table = run_gis(model, cs, hd, gamma=0.5, max_iters=300)
    adapted = build_adapted_model(model, state.field, table)
    via_cli = parse_arpa((workdir / "cli.arpa").read_text())
    assert via_cli.order_counts() == adapted.order_counts()
    for k in range(1, adapted.max_order + 1):
        for gram, (logp, logbow) in adapted.orders[k].items():
            gram2 = via_cli.vocab.encode(adapted.vocab.tokens(gram))
            logp2, logbow2 = via_cli.orders[k][gram2]
            assert logp2 == pytest.approx(logp, abs=1e-6)
            if logbow is not None:
                assert logbow2 == pytest.approx(logbow, abs=1e-6)


def test_subprocess_entry_point(workdir):
    proc = subprocess.run(
        [sys.executable, "-m", "mdilm", "ppl", "--lm", str(workdir / "out.arpa"),
         "--corpus", str(workdir / "in_corpus.txt")],
        capture_output=True, text=True,
        env={"PYTHONPATH": str(Path(__file__).resolve().parent.parent / "src"),
             "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("logprob")
