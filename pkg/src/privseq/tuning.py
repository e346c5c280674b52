"""Retention tuning: pick how many spectral coefficients to keep.

Keeping more coefficients lowers truncation error but spreads the
privacy budget over more noisy values; the best cut depends on the
budget and on how compressible the signals are. tune_k evaluates every
candidate retention count against reconstruction error on a reference
group and keeps the winner per chunk, with ties resolved toward the
smaller (cheaper) count.

Candidate evaluation reuses one noise draw per (signal, run, chunk):
candidate k consumes the first k values as real perturbations and the
next k as imaginary ones, so nearby candidates face correlated noise
and the comparison is not dominated by draw luck.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from privseq import transform
from privseq.core import ChunkPlan, Corpus, DataError, ParameterError, RealSeq, chunk_plan
from privseq.mechanisms import MECHANISMS, fpa_lambda
from privseq.noise import NoiseSource, unit_laplace
from privseq.sensitivity import DIFFERENCE, RAW, chunk_sensitivities

__all__ = [
    "tune_k",
    "tune_corpus",
    "KTable",
    "write_k_csv",
    "load_k_csv",
]

_K_HEADER = ("group_label", "feature", "chunk_index", "k", "runs_used", "epsilon_used")

# NMSE cells with a denominator below this are skipped, matching the
# aggregate-metric convention.
_DENOM_FLOOR = 1e-12


def _chunk_objective(
    chunks: np.ndarray,
    spectra: np.ndarray,
    delta: float,
    epsilon: float,
    runs: int,
    draws: np.ndarray,
    difference: bool,
) -> list[float]:
    """Mean NMSE over (signal, run) for every retention count.

    chunks: (members, c_len) clean rows; spectra: their transforms (of
    the differenced rows when difference is set); draws: (members, runs,
    2 * c_len) unit noise. Returns objective[k - 1] for k in 1..c_len;
    candidates whose every cell is flagged get math.inf.
    """
    members, c_len = chunks.shape
    means = np.mean(chunks, axis=1)
    out: list[float] = []
    for k in range(1, c_len + 1):
        lam = fpa_lambda(c_len, k, delta, epsilon)
        bins = np.zeros((members, runs, c_len), dtype=np.complex128)
        bins[:, :, :k] = spectra[:, np.newaxis, :k]
        if lam > 0.0:
            v = bins.view(np.float64)
            v[:, :, 0 : 2 * k : 2] += lam * draws[:, :, :k]
            v[:, :, 1 : 2 * k : 2] += lam * draws[:, :, k : 2 * k]
        rec = transform.idft_batch(bins.reshape(members * runs, c_len)).real
        rec = rec.reshape(members, runs, c_len)
        if difference:
            rec = np.cumsum(rec, axis=2)
        d = rec - chunks[:, np.newaxis, :]
        num = np.mean(d * d, axis=2)
        den = means[:, np.newaxis] * np.mean(rec, axis=2)
        defined = np.abs(den) >= _DENOM_FLOOR
        values = np.divide(num, den, out=np.zeros_like(num), where=defined)
        valid = defined & (values >= 0.0)
        count = int(np.count_nonzero(valid))
        out.append(float(np.sum(values[valid])) / count if count else math.inf)
    return out


def tune_k(
    signals: Sequence[RealSeq],
    plan: ChunkPlan,
    mechanism: str,
    epsilon: float,
    runs: int,
    src: NoiseSource,
) -> tuple[int, ...]:
    """Best retention count per chunk for a group of same-length signals.

    Every k in 1..chunk_length is scored by mean reconstruction NMSE
    over (signal, run) noisy executions at the given budget; ties go to
    the smaller k. The group also supplies the sensitivity, so it must
    contain at least two signals.
    """
    if mechanism not in MECHANISMS or mechanism == "lpa":
        raise ParameterError(
            f"retention tuning applies to fpa, cfpa or dcfpa, got {mechanism!r}"
        )
    if runs < 1:
        raise ParameterError(f"runs must be >= 1, got {runs}")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ParameterError(f"epsilon must be positive and finite, got {epsilon}")
    rows = [np.asarray(s, dtype=np.float64) for s in signals]
    if len(rows) < 2:
        raise ParameterError(f"tuning needs a group of >= 2 signals, got {len(rows)}")
    for row in rows:
        if row.ndim != 1 or row.size != plan.total_length:
            raise ParameterError(
                f"every signal must be 1-D of length {plan.total_length}"
            )
    difference = mechanism == "dcfpa"
    domain = DIFFERENCE if difference else RAW
    deltas = chunk_sensitivities(rows, plan, 2, domain=domain)
    stacked = np.stack(rows)
    members = len(rows)

    best: list[int] = []
    for ci, (s, e) in enumerate(plan.boundaries):
        c_len = e - s
        chunks = np.ascontiguousarray(stacked[:, s:e])
        base = transform.diff_transform if difference else None
        seg = np.stack([transform.diff_transform(r) for r in chunks]) if base else chunks
        spectra = transform.dft_batch(seg)
        draws = np.stack(
            [
                np.stack(
                    [
                        unit_laplace(src.derive(m, t, ci).generator(), 2 * c_len)
                        for t in range(runs)
                    ]
                )
                for m in range(members)
            ]
        )
        scores = _chunk_objective(
            chunks, spectra, deltas[ci], epsilon, runs, draws, difference
        )
        k_best, s_best = 1, scores[0]
        for k in range(2, c_len + 1):
            if scores[k - 1] < s_best:
                k_best, s_best = k, scores[k - 1]
        best.append(k_best)
    return tuple(best)


@dataclass(frozen=True, slots=True)
class KTable:
    """Tuned retention counts keyed by (group label, feature, chunk)."""

    entries: Mapping[tuple[str, str, int], int]
    runs_used: int
    epsilon_used: float

    def __post_init__(self) -> None:
        frozen = {}
        for key, k in dict(self.entries).items():
            label, feature, ci = key
            if int(k) < 1 or int(ci) < 0:
                raise ParameterError(f"bad k table entry {key} -> {k}")
            frozen[(str(label), str(feature), int(ci))] = int(k)
        object.__setattr__(self, "entries", frozen)
        if self.runs_used < 1:
            raise ParameterError(f"runs_used must be >= 1, got {self.runs_used}")
        if not self.epsilon_used > 0:
            raise ParameterError(f"epsilon_used must be positive, got {self.epsilon_used}")

    def mapping(self, group_label: str) -> dict[tuple[str, int], int]:
        """{(feature, chunk_index): k} for one group, the form the sweep
        and report builders consume."""
        out = {
            (feature, ci): k
            for (label, feature, ci), k in self.entries.items()
            if label == group_label
        }
        if not out:
            raise ParameterError(f"no tuned entries for group {group_label!r}")
        return out

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted({label for label, _, _ in self.entries}))


def tune_corpus(
    corpus: Corpus,
    label_kind: str,
    chunk_size: int,
    mechanism: str,
    epsilon: float,
    runs: int,
    src: NoiseSource,
) -> KTable:
    """Tune every (label group, feature, chunk) of a corpus at one
    reference budget. Shorter recordings are zero-padded to the group
    maximum, mirroring how the mechanisms are applied."""
    if chunk_size < 1:
        raise ParameterError(f"chunk_size must be >= 1, got {chunk_size}")
    entries: dict[tuple[str, str, int], int] = {}
    labels = corpus.label_values(label_kind)
    for li, label in enumerate(labels):
        group = corpus.group(label_kind, label)
        length = max(m.length for m in group)
        plan = chunk_plan(length, chunk_size)
        for col, feature in enumerate(corpus.schema):
            if feature in corpus.excluded_features:
                continue
            signals = []
            for m in group:
                padded = np.zeros(length, dtype=np.float64)
                padded[: m.length] = m.values[:, col]
                signals.append(padded)
            ks = tune_k(signals, plan, mechanism, epsilon, runs, src.derive(li, col))
            for ci, k in enumerate(ks):
                entries[(label, feature, ci)] = k
    return KTable(entries=entries, runs_used=runs, epsilon_used=float(epsilon))


def write_k_csv(table: KTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_K_HEADER)
        for (label, feature, ci), k in sorted(table.entries.items()):
            writer.writerow(
                [label, feature, ci, k, table.runs_used, repr(table.epsilon_used)]
            )


def load_k_csv(path) -> KTable:
    entries: dict[tuple[str, str, int], int] = {}
    runs_used: int | None = None
    epsilon_used: float | None = None
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != _K_HEADER:
            raise DataError(f"{path}: expected header {','.join(_K_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(_K_HEADER):
                raise DataError(f"{path}: row {row_no}: wrong column count")
            try:
                key = (row[0], row[1], int(row[2]))
                k = int(row[3])
                runs = int(row[4])
                eps = float(row[5])
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None
            if key in entries:
                raise DataError(f"{path}: row {row_no}: duplicate entry for {key}")
            if runs_used is None:
                runs_used, epsilon_used = runs, eps
            elif runs != runs_used or eps != epsilon_used:
                raise DataError(
                    f"{path}: row {row_no}: inconsistent runs_used/epsilon_used"
                )
            entries[key] = k
    if not entries:
        raise DataError(f"{path}: no entries")
    try:
        return KTable(entries=entries, runs_used=runs_used, epsilon_used=epsilon_used)
    except ParameterError as exc:
        raise DataError(f"{path}: {exc}") from None
