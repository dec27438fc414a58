"""Command-line harness tests: pipeline artifacts, exit codes, the sweep
aggregate, re-run determinism, parallel parity, and the two documented
end-to-end examples (identity noise, anchor-free ordering)."""

import os
from pathlib import Path

import numpy as np
import pytest

from volmin import cli, linalg

TINY = """\
data.generator = simplex
data.classes = 3
data.n = 400
data.profile = corner-rich
data.cap = 1.0
noise.kind = symmetric
noise.rate = 0.2
train.epochs = 4
train.batch_size = 64
train.hidden = 8
geometry.rays = 64
geometry.trials = 300
trials.seeds = 0
"""


def write_cfg(tmp_path, text, name="exp.cfg", out="out"):
    text = text + f"output.dir = {tmp_path / out}\n"
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.split(",") for line in lines]


def mean_of(path, method):
    for parts in read_rows(path):
        if parts[0] == method and parts[1] == "mean±std":
            return float(parts[2].split("±")[0])
    raise AssertionError(f"no summary row for {method} in {path}")


class TestPipeline:
    def test_generate_corrupt_train_estimate(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY)
        out = tmp_path / "out"

        assert run("generate", "--config", cfg) == 0
        assert (out / "dataset.csv").exists()
        assert (out / "manifest.txt").exists()
        # the config is copied verbatim
        assert (out / "config.txt").read_text(encoding="utf-8") == cfg.read_text(
            encoding="utf-8"
        )

        assert run("corrupt", "--config", cfg) == 0
        assert (out / "dataset_noisy.csv").exists()
        t_true = linalg.read_matrix_text(out / "true_transition.txt")
        np.testing.assert_allclose(np.diag(t_true), 0.8)

        assert run("train-volmin", "--config", cfg) == 0
        for name in ("history.csv", "estimated_transition.txt",
                     "transition_weights.txt", "classifier.txt"):
            assert (out / name).exists(), name
        est = linalg.read_matrix_text(out / "estimated_transition.txt")
        np.testing.assert_allclose(est.sum(axis=0), 1.0, atol=1e-12)

        assert run("estimate-anchor", "--config", cfg) == 0
        assert (out / "classifier_noisy.txt").exists()
        assert (out / "estimated_transition_anchor_max.txt").exists()
        report = (out / "error_report.txt").read_text(encoding="utf-8")
        assert "anchor-max estimation_error = " in report

    def test_manifest_contents(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY)
        out = tmp_path / "out"
        run("generate", "--config", cfg)
        assert run("corrupt", "--config", cfg) == 0
        manifest = (out / "manifest.txt").read_text(encoding="utf-8")
        assert "command = corrupt\n" in manifest
        assert f"config_source = {cfg}\n" in manifest
        assert "seeds = 0\n" in manifest
        assert "input.dataset.csv = " in manifest
        assert "wall_time_seconds = " in manifest

    def test_check_scattered_reports(self, tmp_path):
        # corner-rich cap=1.0 has anchors; edge-scattered cap=0.9 does not,
        # yet stays sufficiently scattered.
        cfg = write_cfg(tmp_path, TINY)
        out = tmp_path / "out"
        run("generate", "--config", cfg)
        assert run("check-scattered", "--config", cfg) == 0
        report = (out / "scatter_report.txt").read_text(encoding="utf-8")
        assert "anchor_verdict=true" in report

        edge = TINY.replace("profile = corner-rich", "profile = edge-scattered")
        edge = edge.replace("cap = 1.0", "cap = 0.9")
        cfg2 = write_cfg(tmp_path, edge, name="edge.cfg", out="out_edge")
        run("generate", "--config", cfg2)
        assert run("check-scattered", "--config", cfg2) == 0
        report = (tmp_path / "out_edge" / "scatter_report.txt").read_text(
            encoding="utf-8"
        )
        assert "coverage_verdict=true" in report
        assert "anchor_verdict=false" in report
        assert "scattered_verdict=true" in report


class TestExitCodes:
    def test_missing_upstream_artifact(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, TINY)
        assert run("train-volmin", "--config", cfg) == 2
        err = capsys.readouterr().err
        assert "missing upstream artifact" in err
        assert "dataset_noisy.csv" in err
        assert "run `volmin corrupt` with the same config first" in err

    def test_corrupt_names_generate(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, TINY)
        assert run("corrupt", "--config", cfg) == 2
        err = capsys.readouterr().err
        assert "dataset.csv" in err and "volmin generate" in err

    def test_config_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "data.bogus = 1\n", name="bad.cfg")
        assert run("generate", "--config", cfg) == 2
        err = capsys.readouterr().err
        assert "config error" in err
        assert "bad.cfg:1: unknown key 'bogus'" in err

    def test_unreadable_config(self, tmp_path, capsys):
        assert run("generate", "--config", tmp_path / "absent.cfg") == 2
        assert "cannot read config" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_numerical_failure(self, tmp_path, capsys):
        # Astronomically large classifier steps overflow the weights; the
        # trainer aborts and the CLI maps that to exit 3.
        blowup = TINY.replace("train.hidden = 8", "train.hidden = ")
        blowup = blowup.replace(
            "train.epochs = 4",
            "train.epochs = 2\ntrain.classifier_lr = 2e154\n"
            "train.classifier_weight_decay = 1e154",
        )
        cfg = write_cfg(tmp_path, blowup, name="blowup.cfg")
        run("generate", "--config", cfg)
        run("corrupt", "--config", cfg)
        assert run("train-volmin", "--config", cfg) == 3
        err = capsys.readouterr().err
        assert "numerical failure" in err
        assert "non-finite" in err

    def test_anchor_command_needs_anchor_method(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, TINY + "estimators.methods = volmin\n")
        run("generate", "--config", cfg)
        run("corrupt", "--config", cfg)
        assert run("estimate-anchor", "--config", cfg) == 2
        assert "no anchor estimator" in capsys.readouterr().err

    def test_bad_threads_value(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("VOLMIN_THREADS", "zero")
        cfg = write_cfg(tmp_path, TINY)
        assert run("sweep", "--config", cfg) == 2
        assert "VOLMIN_THREADS" in capsys.readouterr().err


SWEEP = """\
data.generator = simplex
data.classes = 3
data.n = 300
data.profile = corner-rich
data.cap = 1.0
noise.kind = symmetric
noise.rate = 0.2
train.epochs = 3
train.batch_size = 64
train.hidden = 8
estimators.methods = volmin, anchor-max, anchor-percentile
trials.seeds = 0, 1
"""


class TestSweep:
    def test_aggregate_structure(self, tmp_path, monkeypatch):
        monkeypatch.delenv("VOLMIN_THREADS", raising=False)
        cfg = write_cfg(tmp_path, SWEEP)
        out = tmp_path / "out"
        assert run("sweep", "--config", cfg) == 0
        rows = read_rows(out / "sweep.csv")
        assert rows[0] == ["method", "seed", "est_error", "test_accuracy",
                           "posterior_linf"]
        # per-seed rows grouped by method in config order, seeds in order
        body = [(r[0], r[1]) for r in rows[1:7]]
        assert body == [
            ("volmin", "0"), ("volmin", "1"),
            ("anchor-max", "0"), ("anchor-max", "1"),
            ("anchor-percentile", "0"), ("anchor-percentile", "1"),
        ]
        tail = [(r[0], r[1]) for r in rows[7:]]
        assert tail == [
            ("volmin", "mean±std"),
            ("anchor-max", "mean±std"),
            ("anchor-percentile", "mean±std"),
        ]
        # anchor rows leave the posterior column empty
        assert rows[3][4] == ""
        for s in (0, 1):
            assert (out / f"seed_{s}" / "estimated_transition.txt").exists()
            assert (out / f"seed_{s}" / "error_report.txt").exists()

    def test_rerun_is_byte_identical_except_manifest(self, tmp_path, monkeypatch):
        monkeypatch.delenv("VOLMIN_THREADS", raising=False)
        cfg = write_cfg(tmp_path, SWEEP)
        out = tmp_path / "out"
        assert run("sweep", "--config", cfg) == 0
        snapshot = {
            p.relative_to(out): p.read_bytes()
            for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.txt"
        }
        assert run("sweep", "--config", cfg) == 0
        after = {
            p.relative_to(out): p.read_bytes()
            for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.txt"
        }
        assert snapshot == after

    def test_parallel_matches_sequential(self, tmp_path, monkeypatch):
        cfg_a = write_cfg(tmp_path, SWEEP, name="a.cfg", out="out_a")
        cfg_b = write_cfg(tmp_path, SWEEP, name="b.cfg", out="out_b")
        monkeypatch.delenv("VOLMIN_THREADS", raising=False)
        assert run("sweep", "--config", cfg_a) == 0
        monkeypatch.setenv("VOLMIN_THREADS", "2")
        assert run("sweep", "--config", cfg_b) == 0
        a = (tmp_path / "out_a" / "sweep.csv").read_bytes()
        b = (tmp_path / "out_b" / "sweep.csv").read_bytes()
        assert a == b
        for s in (0, 1):
            ta = (tmp_path / "out_a" / f"seed_{s}" / "estimated_transition.txt")
            tb = (tmp_path / "out_b" / f"seed_{s}" / "estimated_transition.txt")
            assert ta.read_bytes() == tb.read_bytes()


class TestOverrides:
    def test_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.delenv("VOLMIN_THREADS", raising=False)
        cfg = write_cfg(tmp_path, SWEEP)
        out = tmp_path / "out"
        assert run("sweep", "--config", cfg, "--seed", "7") == 0
        assert (out / "seed_7").is_dir()
        assert not (out / "seed_0").exists()
        seeds = {r[1] for r in read_rows(out / "sweep.csv")[1:] if r[1] != "mean±std"}
        assert seeds == {"7"}
        assert "seeds = 7\n" in (out / "manifest.txt").read_text(encoding="utf-8")

    def test_out_override(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY)
        other = tmp_path / "elsewhere"
        assert run("generate", "--config", cfg, "--out", other) == 0
        assert (other / "dataset.csv").exists()
        assert not (tmp_path / "out" / "dataset.csv").exists()


class TestDocumentedExamples:
    def test_identity_noise_recovers_identity(self, tmp_path, monkeypatch):
        # Corrupting with the identity (rate 0) leaves labels clean; the
        # sweep's estimated transition should be the identity to within 0.02
        # estimation error.
        monkeypatch.delenv("VOLMIN_THREADS", raising=False)
        text = "\n".join(
            [
                "data.generator = simplex",
                "data.classes = 3",
                "data.n = 3000",
                "data.profile = edge-scattered",
                "data.cap = 0.9",
                "noise.kind = symmetric",
                "noise.rate = 0.0",
                "train.epochs = 150",
                "train.batch_size = 128",
                "train.hidden = 16",
                "train.transition_lr = 2.0",
                "estimators.methods = volmin",
                "trials.seeds = 0",
                "",
            ]
        )
        cfg = write_cfg(tmp_path, text, name="ident.cfg")
        assert run("sweep", "--config", cfg) == 0
        assert mean_of(tmp_path / "out" / "sweep.csv", "volmin") < 0.02

    def test_anchor_free_ordering(self, tmp_path, monkeypatch):
        # No anchors by construction (cap 0.9) plus the removal preset: the
        # joint estimator must beat the anchor-point baseline on mean
        # estimation error.
        monkeypatch.delenv("VOLMIN_THREADS", raising=False)
        text = "\n".join(
            [
                "data.generator = simplex",
                "data.classes = 3",
                "data.n = 4000",
                "data.profile = edge-scattered",
                "data.cap = 0.9",
                "data.remove_anchor_fraction = 0.1",
                "noise.kind = symmetric",
                "noise.rate = 0.3",
                "train.epochs = 150",
                "train.batch_size = 128",
                "train.hidden = 16",
                "train.transition_lr = 0.15",
                "estimators.methods = volmin, anchor-max",
                "trials.seeds = 0, 1",
                "",
            ]
        )
        cfg = write_cfg(tmp_path, text, name="na.cfg")
        assert run("sweep", "--config", cfg) == 0
        sweep = tmp_path / "out" / "sweep.csv"
        assert mean_of(sweep, "volmin") < mean_of(sweep, "anchor-max")
