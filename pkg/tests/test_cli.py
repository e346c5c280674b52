"""End-to-end command checks: every command runs, reruns are
byte-identical, worker count never changes results, and failures map to
the documented exit codes."""
import json
import subprocess
import sys
from pathlib import Path

import click
import numpy as np
import pytest
from click.testing import CliRunner

from privseq.cli import _handled, main
from privseq.core import InternalInvariantError
from privseq.dataio import MANIFEST_NAME, REPORT_NAME, load_corpus
from privseq.metrics import load_sweep_csv
from privseq.tuning import load_k_csv


def run_cli(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _dir_bytes(path):
    return {
        p.relative_to(path): p.read_bytes() for p in sorted(Path(path).rglob("*")) if p.is_file()
    }


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "corpus"
    result = run_cli(
        "synth", "--participants", 3, "--labels", 2, "--length", 40,
        "--features", 2, "--seed", 7, "--out", out,
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def manifest(corpus_dir):
    return corpus_dir / MANIFEST_NAME


# --- general surface -------------------------------------------------------


def test_help_everywhere():
    assert run_cli("--help").exit_code == 0
    for cmd in ("synth", "perturb", "sweep", "tune-k", "corr", "classify"):
        result = run_cli(cmd, "--help")
        assert result.exit_code == 0, cmd


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "privseq.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "Differentially private" in proc.stdout


def test_unknown_flag_is_a_usage_error():
    assert run_cli("synth", "--frobnicate", "1").exit_code == 2


def test_internal_invariant_maps_to_exit_4():
    @click.command()
    @_handled
    def boom():
        raise InternalInvariantError("stream desync")

    result = CliRunner().invoke(boom, [])
    assert result.exit_code == 4
    assert "invariant" in result.stderr


# --- synth -------------------------------------------------------------------


def test_synth_writes_a_loadable_corpus(corpus_dir, manifest):
    corpus = load_corpus(manifest)
    assert len(corpus.matrices) == 6
    assert corpus.schema == ("f00", "f01")
    assert {m.labels["category"] for m in corpus.matrices} == {"l0", "l1"}


def test_synth_is_byte_identical_per_seed(tmp_path):
    args = ("synth", "--participants", 2, "--labels", 2, "--length", 16,
            "--features", 1, "--seed", 3)
    assert run_cli(*args, "--out", tmp_path / "a").exit_code == 0
    assert run_cli(*args, "--out", tmp_path / "b").exit_code == 0
    a, b = _dir_bytes(tmp_path / "a"), _dir_bytes(tmp_path / "b")
    assert set(a) == set(b)
    assert all(a[k] == b[k] for k in a)


def test_synth_default_offsets_spread_around_3000(tmp_path):
    out = tmp_path / "three"
    assert run_cli(
        "synth", "--participants", 3, "--labels", 3, "--length", 64,
        "--features", 1, "--seed", 1, "--out", out,
    ).exit_code == 0
    corpus = load_corpus(out / MANIFEST_NAME)
    for label, expected in (("l0", 2700.0), ("l1", 3000.0), ("l2", 3300.0)):
        group = corpus.group("category", label)
        mean = float(np.mean([np.mean(m.values) for m in group]))
        assert abs(mean - expected) < 5.0


def test_synth_named_labels_and_offsets(tmp_path):
    out = tmp_path / "named"
    result = run_cli(
        "synth", "--participants", 2, "--labels", "walk,run", "--offsets", "10,20",
        "--length", 16, "--features", 1, "--seed", 1, "--out", out,
    )
    assert result.exit_code == 0
    corpus = load_corpus(out / MANIFEST_NAME)
    assert {m.labels["category"] for m in corpus.matrices} == {"walk", "run"}


def test_synth_offsets_count_mismatch_is_exit_2(tmp_path):
    result = run_cli(
        "synth", "--labels", 3, "--offsets", "1,2", "--out", tmp_path / "x",
    )
    assert result.exit_code == 2
    assert "error:" in result.stderr


# --- perturb -----------------------------------------------------------------


def test_perturb_writes_noisy_corpus_and_report(manifest, tmp_path):
    out = tmp_path / "noisy"
    result = run_cli(
        "perturb", "--manifest", manifest, "--mechanism", "cfpa",
        "--epsilon", 4.8, "--chunk-size", 8, "--seed", 5, "--out", out,
    )
    assert result.exit_code == 0, result.output
    assert "total epsilon" in result.stdout
    # two features, parallel across chunks, summed across features
    assert "9.6" in result.stdout

    clean = load_corpus(manifest)
    noisy = load_corpus(out / MANIFEST_NAME)
    for a, b in zip(clean.matrices, noisy.matrices):
        assert a.values.shape == b.values.shape
        assert not np.array_equal(a.values, b.values)

    report = json.loads((out / REPORT_NAME).read_text())
    assert set(report) == {"l0", "l1"}
    assert all(r["total_epsilon"] == 9.6 for r in report.values())


def test_perturb_rerun_and_jobs_are_byte_identical(manifest, tmp_path):
    base = ("perturb", "--manifest", manifest, "--mechanism", "dcfpa",
            "--epsilon", 2.4, "--chunk-size", 8, "--seed", 9)
    assert run_cli(*base, "--out", tmp_path / "a").exit_code == 0
    assert run_cli(*base, "--out", tmp_path / "b").exit_code == 0
    assert run_cli(*base, "--jobs", 3, "--out", tmp_path / "c").exit_code == 0
    a, b, c = (_dir_bytes(tmp_path / d) for d in ("a", "b", "c"))
    assert a == b == c


def test_perturb_lpa_warns_and_ignores_chunk_size(manifest, tmp_path):
    result = run_cli(
        "perturb", "--manifest", manifest, "--mechanism", "lpa",
        "--epsilon", 2.4, "--chunk-size", 8, "--out", tmp_path / "out",
    )
    assert result.exit_code == 0
    assert "ignored" in result.stderr


def test_perturb_bad_epsilon_is_exit_2(manifest, tmp_path):
    result = run_cli(
        "perturb", "--manifest", manifest, "--mechanism", "lpa",
        "--epsilon", -1.0, "--out", tmp_path / "out",
    )
    assert result.exit_code == 2
    assert "error:" in result.stderr


def test_perturb_corrupt_cell_is_exit_3(corpus_dir, tmp_path):
    broken_dir = tmp_path / "broken"
    broken_dir.mkdir()
    for p in corpus_dir.iterdir():
        (broken_dir / p.name).write_bytes(p.read_bytes())
    target = next(broken_dir.glob("p00*.csv"))
    text = target.read_text().splitlines()
    cells = text[2].split(",")
    cells[0] = "oops"
    text[2] = ",".join(cells)
    target.write_text("\n".join(text) + "\n")
    result = run_cli(
        "perturb", "--manifest", broken_dir / MANIFEST_NAME, "--mechanism", "lpa",
        "--epsilon", 2.4, "--out", tmp_path / "out",
    )
    assert result.exit_code == 3
    assert "row 3" in result.stderr


# --- sweep ---------------------------------------------------------------------


def test_sweep_small_grid(manifest, tmp_path):
    out = tmp_path / "sweep.csv"
    result = run_cli(
        "sweep", "--manifest", manifest, "--mechanisms", "lpa,cfpa",
        "--epsilons", "2.4,24", "--chunk-sizes", "8", "--runs", 2,
        "--seed", 4, "--out", out,
    )
    assert result.exit_code == 0, result.output
    sweep = load_sweep_csv(out)
    assert len(sweep.rows) == 4
    assert sweep.row("cfpa", 8, 24.0).mean_utility > sweep.row("cfpa", 8, 2.4).mean_utility


def test_sweep_rerun_and_jobs_are_byte_identical(manifest, tmp_path):
    base = ("sweep", "--manifest", manifest, "--mechanisms", "dcfpa",
            "--epsilons", "4.8", "--chunk-sizes", "8", "--runs", 2, "--seed", 4)
    assert run_cli(*base, "--out", tmp_path / "a.csv").exit_code == 0
    assert run_cli(*base, "--out", tmp_path / "b.csv").exit_code == 0
    assert run_cli(*base, "--jobs", 4, "--out", tmp_path / "c.csv").exit_code == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_sweep_config_file_with_flag_override(manifest, tmp_path):
    config = tmp_path / "sweep.json"
    config.write_text(json.dumps({"mechanisms": ["lpa"], "epsilons": [4.8], "runs": 1}))

    out = tmp_path / "from_config.csv"
    assert run_cli(
        "sweep", "--manifest", manifest, "--config", config, "--out", out,
    ).exit_code == 0
    rows = load_sweep_csv(out).rows
    assert [(r.mechanism, r.epsilon) for r in rows] == [("lpa", 4.8)]

    out2 = tmp_path / "overridden.csv"
    assert run_cli(
        "sweep", "--manifest", manifest, "--config", config,
        "--epsilons", "2.4", "--out", out2,
    ).exit_code == 0
    rows2 = load_sweep_csv(out2).rows
    assert [(r.mechanism, r.epsilon) for r in rows2] == [("lpa", 2.4)]


def test_sweep_config_file_errors(manifest, tmp_path):
    bad_key = tmp_path / "bad_key.json"
    bad_key.write_text(json.dumps({"runs": 1, "color": "red"}))
    result = run_cli("sweep", "--manifest", manifest, "--config", bad_key,
                     "--out", tmp_path / "x.csv")
    assert result.exit_code == 2
    assert "color" in result.stderr

    not_json = tmp_path / "broken.json"
    not_json.write_text("{nope")
    result = run_cli("sweep", "--manifest", manifest, "--config", not_json,
                     "--out", tmp_path / "y.csv")
    assert result.exit_code == 3


def test_sweep_tune_constraints(manifest, tmp_path):
    result = run_cli(
        "sweep", "--manifest", manifest, "--tune", "--chunk-sizes", "8,16",
        "--runs", 1, "--out", tmp_path / "x.csv",
    )
    assert result.exit_code == 2
    assert "exactly one" in result.stderr

    k_file = tmp_path / "k.csv"
    k_file.write_text("group_label,feature,chunk_index,k,runs_used,epsilon_used\n"
                      "l0,f00,0,1,1,4.8\n")
    result = run_cli(
        "sweep", "--manifest", manifest, "--tune", "--k-file", k_file,
        "--chunk-sizes", "8", "--runs", 1, "--out", tmp_path / "y.csv",
    )
    assert result.exit_code == 2
    assert "mutually exclusive" in result.stderr


def test_sweep_with_tuning_pass(manifest, tmp_path):
    out = tmp_path / "tuned_sweep.csv"
    result = run_cli(
        "sweep", "--manifest", manifest, "--mechanisms", "cfpa",
        "--epsilons", "2.4", "--chunk-sizes", "8", "--runs", 1,
        "--tune", "--tune-runs", 2, "--seed", 4, "--out", out,
    )
    assert result.exit_code == 0, result.output
    assert len(load_sweep_csv(out).rows) == 1


# --- tune-k ----------------------------------------------------------------------


def test_tune_k_writes_reusable_table(manifest, tmp_path):
    k_path = tmp_path / "k.csv"
    result = run_cli(
        "tune-k", "--manifest", manifest, "--chunk-size", 8,
        "--runs", 2, "--seed", 6, "--out", k_path,
    )
    assert result.exit_code == 0, result.output
    table = load_k_csv(k_path)
    assert table.labels() == ("l0", "l1")
    assert all(1 <= k <= 8 for k in table.entries.values())

    out = tmp_path / "noisy"
    result = run_cli(
        "perturb", "--manifest", manifest, "--mechanism", "cfpa",
        "--epsilon", 2.4, "--chunk-size", 8, "--k-file", k_path, "--out", out,
    )
    assert result.exit_code == 0, result.output

    sweep_out = tmp_path / "k_sweep.csv"
    result = run_cli(
        "sweep", "--manifest", manifest, "--mechanisms", "cfpa",
        "--epsilons", "2.4", "--chunk-sizes", "8", "--runs", 1,
        "--k-file", k_path, "--out", sweep_out,
    )
    assert result.exit_code == 0, result.output


# --- corr ------------------------------------------------------------------------


def test_corr_writes_per_label_curves(manifest, tmp_path):
    out_dir = tmp_path / "curves"
    result = run_cli(
        "corr", "--manifest", manifest, "--feature", "f00", "--out-dir", out_dir,
    )
    assert result.exit_code == 0, result.output
    assert "0.5" in result.stdout  # synth default step-seconds
    for label in ("l0", "l1"):
        lines = (out_dir / f"corr_f00_{label}.csv").read_text().splitlines()
        assert lines[0] == "delta_t,r"
        assert len(lines) == 12
        assert float(lines[1].split(",")[1]) == 1.0


def test_corr_difference_domain(manifest, tmp_path):
    result = run_cli(
        "corr", "--manifest", manifest, "--feature", "f01",
        "--domain", "difference", "--out-dir", tmp_path,
    )
    assert result.exit_code == 0, result.output


def test_corr_unknown_feature_is_exit_2(manifest, tmp_path):
    result = run_cli(
        "corr", "--manifest", manifest, "--feature", "nope", "--out-dir", tmp_path,
    )
    assert result.exit_code == 2


# --- classify ----------------------------------------------------------------------


def test_classify_clean_corpus_is_perfect(manifest, tmp_path):
    out_dir = tmp_path / "clf"
    result = run_cli(
        "classify", "--manifest", manifest, "--window", 10, "--neighbors", 3,
        "--mechanism", "none", "--epsilon", "", "--seed", 2, "--out-dir", out_dir,
    )
    assert result.exit_code == 0, result.output

    summary = (out_dir / "summary.csv").read_text().splitlines()
    assert summary[0] == "label_kind,mechanism,epsilon,chunk_size,mode,accuracy"
    cells = summary[1].split(",")
    assert cells[0] == "category"
    assert cells[1] == "none"
    assert cells[4] == "majority"
    assert float(cells[5]) == 1.0

    folds = (out_dir / "folds.csv").read_text().splitlines()
    assert len(folds) == 4  # header + 3 participants
    assert folds[0].startswith("fold,held_out_participant")


def test_classify_instance_mode(manifest, tmp_path):
    result = run_cli(
        "classify", "--manifest", manifest, "--window", 10, "--neighbors", 3,
        "--no-majority", "--out-dir", tmp_path,
    )
    assert result.exit_code == 0, result.output
    cells = (tmp_path / "summary.csv").read_text().splitlines()[1].split(",")
    assert cells[4] == "instance"
    assert float(cells[5]) == 1.0


def test_classify_too_many_neighbors_is_exit_2(manifest, tmp_path):
    result = run_cli(
        "classify", "--manifest", manifest, "--window", 10, "--neighbors", 500,
        "--out-dir", tmp_path,
    )
    assert result.exit_code == 2
