"""Retention tuning: budget-limit behavior, determinism, corpus-wide
tables, and the tuned-count CSV format."""
import numpy as np
import pytest

from privseq.core import Corpus, DataError, FeatureMatrix, ParameterError, chunk_plan
from privseq.noise import NoiseSource
from privseq.tuning import KTable, load_k_csv, tune_corpus, tune_k, write_k_csv


def _smooth_pair(n=32, seed=0):
    rng = np.random.default_rng(seed)
    base = np.cumsum(rng.standard_normal(n)) + 50.0
    other = base + 0.5 * rng.standard_normal(n)
    return [base, other]


def test_tight_budget_drives_k_to_one():
    # at epsilon -> 0 noise dwarfs truncation error, so keep one bin
    signals = _smooth_pair()
    plan = chunk_plan(32, 16)
    ks = tune_k(signals, plan, "cfpa", 1e-3, 8, NoiseSource(seed=1))
    assert ks == (1, 1)


def test_zero_sensitivity_drives_k_to_chunk_length():
    # identical signals mean zero sensitivity, zero noise: full retention
    x = np.cumsum(np.ones(24)) + 3.0
    plan = chunk_plan(24, 12)
    ks = tune_k([x, x.copy()], plan, "cfpa", 1.0, 4, NoiseSource(seed=2))
    assert ks == (12, 12)


def test_generous_budget_drives_k_to_chunk_length():
    signals = _smooth_pair(seed=3)
    plan = chunk_plan(32, 16)
    ks = tune_k(signals, plan, "fpa", 1e9, 4, NoiseSource(seed=3))
    assert ks == (16, 16)


def test_tuning_covers_dcfpa():
    signals = _smooth_pair(seed=4)
    plan = chunk_plan(32, 32)
    ks = tune_k(signals, plan, "dcfpa", 1e-3, 8, NoiseSource(seed=4))
    assert ks == (1,)


def test_tuning_is_reproducible():
    signals = _smooth_pair(seed=5)
    plan = chunk_plan(32, 8)
    a = tune_k(signals, plan, "cfpa", 2.4, 6, NoiseSource(seed=6))
    b = tune_k(signals, plan, "cfpa", 2.4, 6, NoiseSource(seed=6))
    assert a == b
    assert len(a) == 4
    assert all(1 <= k <= 8 for k in a)


def test_tune_k_validation():
    signals = _smooth_pair()
    plan = chunk_plan(32, 16)
    src = NoiseSource(seed=7)
    with pytest.raises(ParameterError):
        tune_k(signals, plan, "lpa", 1.0, 4, src)
    with pytest.raises(ParameterError):
        tune_k(signals, plan, "dct", 1.0, 4, src)
    with pytest.raises(ParameterError):
        tune_k(signals, plan, "fpa", 0.0, 4, src)
    with pytest.raises(ParameterError):
        tune_k(signals, plan, "fpa", 1.0, 0, src)
    with pytest.raises(ParameterError):
        tune_k(signals[:1], plan, "fpa", 1.0, 4, src)
    with pytest.raises(ParameterError):
        tune_k([signals[0], signals[1][:30]], plan, "fpa", 1.0, 4, src)


# --- tune_corpus ----------------------------------------------------------


def _matrix(rid, pid, label, values, names):
    return FeatureMatrix(
        recording_id=rid,
        participant_id=pid,
        labels={"category": label},
        feature_names=names,
        values=np.asarray(values, dtype=np.float64),
    )


def _corpus(lengths=(16, 16, 16, 16), excluded=()):
    rng = np.random.default_rng(8)
    names = ("f0", "f1")
    labels = ["a", "a", "b", "b"]
    mats = [
        _matrix(
            f"r{i}", f"p{i}", labels[i],
            np.cumsum(rng.standard_normal((lengths[i], 2)), axis=0) + 20.0, names,
        )
        for i in range(4)
    ]
    return Corpus(matrices=tuple(mats), schema=names, excluded_features=frozenset(excluded))


def test_tune_corpus_covers_all_groups_and_chunks():
    table = tune_corpus(_corpus(), "category", 8, "cfpa", 2.4, 4, NoiseSource(seed=9))
    assert table.labels() == ("a", "b")
    assert table.runs_used == 4
    assert table.epsilon_used == 2.4
    expected_keys = {
        (label, feature, ci)
        for label in ("a", "b")
        for feature in ("f0", "f1")
        for ci in range(2)
    }
    assert set(table.entries) == expected_keys
    mapping = table.mapping("a")
    assert set(mapping) == {(f, ci) for f in ("f0", "f1") for ci in range(2)}
    with pytest.raises(ParameterError):
        table.mapping("c")


def test_tune_corpus_skips_excluded_and_pads_short_recordings():
    table = tune_corpus(
        _corpus(lengths=(16, 11, 16, 16), excluded=("f1",)),
        "category", 8, "dcfpa", 1.0, 3, NoiseSource(seed=10),
    )
    assert all(feature == "f0" for _, feature, _ in table.entries)
    # group 'a' pads recording r1 up to length 16: still 2 chunks
    assert {ci for label, _, ci in table.entries if label == "a"} == {0, 1}


def test_tune_corpus_validation():
    with pytest.raises(ParameterError):
        tune_corpus(_corpus(), "category", 0, "cfpa", 1.0, 4, NoiseSource(seed=11))


# --- KTable and CSV -------------------------------------------------------


def test_ktable_validation():
    with pytest.raises(ParameterError):
        KTable(entries={("a", "f0", 0): 0}, runs_used=4, epsilon_used=1.0)
    with pytest.raises(ParameterError):
        KTable(entries={("a", "f0", -1): 2}, runs_used=4, epsilon_used=1.0)
    with pytest.raises(ParameterError):
        KTable(entries={("a", "f0", 0): 2}, runs_used=0, epsilon_used=1.0)
    with pytest.raises(ParameterError):
        KTable(entries={("a", "f0", 0): 2}, runs_used=4, epsilon_used=0.0)


def test_k_csv_round_trip(tmp_path):
    table = tune_corpus(_corpus(), "category", 8, "cfpa", 2.4, 4, NoiseSource(seed=12))
    path = tmp_path / "ks.csv"
    write_k_csv(table, path)
    loaded = load_k_csv(path)
    assert loaded.entries == table.entries
    assert loaded.runs_used == table.runs_used
    assert loaded.epsilon_used == table.epsilon_used

    path2 = tmp_path / "ks2.csv"
    write_k_csv(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_k_csv_loader_errors(tmp_path):
    head = "group_label,feature,chunk_index,k,runs_used,epsilon_used\n"
    path = tmp_path / "ks.csv"

    path.write_text("group,feature\n")
    with pytest.raises(DataError):
        load_k_csv(path)

    path.write_text(head)
    with pytest.raises(DataError, match="no entries"):
        load_k_csv(path)

    path.write_text(head + "a,f0,0,2,4,1.0\na,f0,0,3,4,1.0\n")
    with pytest.raises(DataError, match="duplicate"):
        load_k_csv(path)

    path.write_text(head + "a,f0,0,2,4,1.0\na,f0,1,2,8,1.0\n")
    with pytest.raises(DataError, match="inconsistent"):
        load_k_csv(path)

    path.write_text(head + "a,f0,0,2,4,1.0\na,f0,1,2,4,2.0\n")
    with pytest.raises(DataError, match="inconsistent"):
        load_k_csv(path)

    path.write_text(head + "a,f0,zero,2,4,1.0\n")
    with pytest.raises(DataError, match="row 2"):
        load_k_csv(path)
