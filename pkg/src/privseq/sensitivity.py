"""Pairwise query sensitivity over participant groups.

The sensitivity of a feature within a group of recordings is the
maximum L_w distance between any two participants' observation vectors,
after zero-padding every vector to the group's maximum length. Chunked
variants restrict the padded vectors to each chunk range first;
difference-domain variants apply the within-chunk difference transform
before measuring distances.

Summation uses math.fsum, so every distance is the correctly rounded
value of the exact real sum of its IEEE-rounded terms: results are
bit-for-bit reproducible and independent of accumulation order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from privseq.core import (
    ChunkPlan,
    Corpus,
    DataError,
    InsufficientGroupError,
    ParameterError,
    RealSeq,
)
from privseq.transform import diff_transform

__all__ = [
    "lw_distance",
    "feature_sensitivity",
    "chunk_sensitivities",
    "SensitivityTable",
    "build_group_table",
    "write_sensitivity_csv",
    "load_sensitivity_csv",
    "write_sensitivity_tables",
    "load_sensitivity_tables",
    "RAW",
    "DIFFERENCE",
]

RAW = "raw"
DIFFERENCE = "difference"

_CSV_HEADER = ("feature", "chunk", "domain", "norm", "value", "group")


def lw_distance(x: RealSeq, y: RealSeq, w: int) -> float:
    """(sum_i |x_i - y_i|^w)^(1/w) for w in {1, 2}."""
    if w not in (1, 2):
        raise ParameterError(f"norm order must be 1 or 2, got {w}")
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ParameterError("lw_distance expects 1-D sequences")
    if a.shape != b.shape:
        raise ParameterError(f"length mismatch: {a.size} vs {b.size}")
    d = np.abs(a - b)
    if w == 1:
        return math.fsum(d)
    return math.sqrt(math.fsum(d * d))


def _padded_group(group: Sequence[RealSeq]) -> np.ndarray:
    vecs = [np.asarray(v, dtype=np.float64) for v in group]
    if len(vecs) < 2:
        raise InsufficientGroupError(
            f"sensitivity needs at least 2 vectors, got {len(vecs)}"
        )
    for v in vecs:
        if v.ndim != 1 or v.size < 1:
            raise ParameterError("group vectors must be non-empty and 1-D")
    n = max(v.size for v in vecs)
    padded = np.zeros((len(vecs), n), dtype=np.float64)
    for i, v in enumerate(vecs):
        padded[i, : v.size] = v
    return padded


def _max_pair_distance(rows: np.ndarray, w: int) -> float:
    best = 0.0
    m = rows.shape[0]
    for i in range(m):
        for j in range(i + 1, m):
            d = lw_distance(rows[i], rows[j], w)
            if d > best:
                best = d
    return best


def feature_sensitivity(group: Sequence[RealSeq], w: int) -> float:
    """Max pairwise L_w distance over the zero-padded group."""
    if w not in (1, 2):
        raise ParameterError(f"norm order must be 1 or 2, got {w}")
    return _max_pair_distance(_padded_group(group), w)


def chunk_sensitivities(
    group: Sequence[RealSeq], plan: ChunkPlan, w: int, domain: str = RAW
) -> list[float]:
    """Per-chunk sensitivity of the group under the given plan.

    Each padded vector is restricted to the chunk range; in the
    difference domain the within-chunk difference transform (first
    element preserved) is applied before measuring distances.
    """
    if w not in (1, 2):
        raise ParameterError(f"norm order must be 1 or 2, got {w}")
    if domain not in (RAW, DIFFERENCE):
        raise ParameterError(f"domain must be {RAW!r} or {DIFFERENCE!r}, got {domain!r}")
    padded = _padded_group(group)
    if plan.total_length != padded.shape[1]:
        raise ParameterError(
            f"plan covers {plan.total_length} samples but the padded group "
            f"has {padded.shape[1]}"
        )
    out: list[float] = []
    for s, e in plan.boundaries:
        sub = padded[:, s:e]
        if domain == DIFFERENCE:
            sub = np.stack([diff_transform(row) for row in sub])
        out.append(_max_pair_distance(sub, w))
    return out


@dataclass(frozen=True, slots=True)
class SensitivityTable:
    """Flat sensitivity lookup for one participant group.

    Keys are (feature_name, chunk_index, domain, norm_order); values are
    the group sensitivities. One table corresponds to one chunking plan;
    the chunk indices are only meaningful against that plan.
    """

    entries: Mapping[tuple[str, int, str, int], float]
    group_label: str = ""

    def __post_init__(self) -> None:
        checked: dict[tuple[str, int, str, int], float] = {}
        for key, value in dict(self.entries).items():
            feature, chunk, domain, norm = key
            if chunk < 0:
                raise ParameterError(f"negative chunk index in key {key}")
            if domain not in (RAW, DIFFERENCE):
                raise ParameterError(f"unknown domain in key {key}")
            if norm not in (1, 2):
                raise ParameterError(f"unknown norm order in key {key}")
            v = float(value)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ParameterError(f"sensitivity for {key} must be finite and >= 0, got {v}")
            checked[(str(feature), int(chunk), domain, int(norm))] = v
        object.__setattr__(self, "entries", checked)

    def value(self, feature: str, chunk: int, domain: str, norm: int) -> float:
        key = (feature, chunk, domain, norm)
        if key not in self.entries:
            raise ParameterError(f"no sensitivity entry for {key} (group {self.group_label!r})")
        return self.entries[key]

    def features(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for feature, _, _, _ in self.entries:
            seen.setdefault(feature, None)
        return tuple(seen)


def build_group_table(
    corpus: Corpus,
    label_kind: str,
    label_value: str,
    plan: ChunkPlan,
    norms: Iterable[int] = (1, 2),
    domains: Iterable[str] = (RAW, DIFFERENCE),
) -> SensitivityTable:
    """Sensitivity table for one (label value) participant group.

    Groups are formed per (label value, feature): for each feature the
    group consists of that feature's signal from every recording with
    the label. Excluded features get explicit zero entries so lookups
    stay total while mechanisms skip them.
    """
    matrices = corpus.group(label_kind, label_value)
    if len(matrices) < 2:
        raise InsufficientGroupError(
            f"label {label_value!r} has {len(matrices)} recordings; need >= 2"
        )
    entries: dict[tuple[str, int, str, int], float] = {}
    n_chunks = len(plan)
    for feature in corpus.schema:
        excluded = feature in corpus.excluded_features
        group = None if excluded else [m.column(feature) for m in matrices]
        for norm in norms:
            for domain in domains:
                if excluded:
                    values = [0.0] * n_chunks
                else:
                    values = chunk_sensitivities(group, plan, norm, domain)
                for ci, v in enumerate(values):
                    entries[(feature, ci, domain, norm)] = v
    return SensitivityTable(entries=entries, group_label=label_value)


def write_sensitivity_csv(table: SensitivityTable, path) -> None:
    """Serialize to the flat CSV shape (feature,chunk,domain,norm,value,group)."""
    keys = sorted(table.entries)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for key in keys:
            feature, chunk, domain, norm = key
            writer.writerow(
                [feature, chunk, domain, norm, repr(table.entries[key]), table.group_label]
            )


def _read_sensitivity_rows(path):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != _CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(_CSV_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(_CSV_HEADER):
                raise DataError(f"{path}: row {row_no}: expected {len(_CSV_HEADER)} columns")
            feature, chunk_s, domain, norm_s, value_s, group = row
            try:
                yield group, (feature, int(chunk_s), domain, int(norm_s)), float(value_s)
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None


def load_sensitivity_csv(path) -> SensitivityTable:
    """Inverse of write_sensitivity_csv, validating every cell. The file
    must hold a single group; multi-group files load via
    load_sensitivity_tables."""
    entries: dict[tuple[str, int, str, int], float] = {}
    group_label: str | None = None
    for group, key, value in _read_sensitivity_rows(path):
        if group_label is None:
            group_label = group
        elif group != group_label:
            raise DataError(
                f"{path}: holds groups {group_label!r} and {group!r}; "
                "use load_sensitivity_tables"
            )
        entries[key] = value
    try:
        return SensitivityTable(entries=entries, group_label=group_label or "")
    except ParameterError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_sensitivity_tables(tables: Mapping[str, SensitivityTable], path) -> None:
    """All groups of a corpus in one file, rows sorted by group then key."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for label in sorted(tables):
            table = tables[label]
            for key in sorted(table.entries):
                feature, chunk, domain, norm = key
                writer.writerow(
                    [feature, chunk, domain, norm, repr(table.entries[key]), label]
                )


def load_sensitivity_tables(path) -> dict[str, SensitivityTable]:
    """Group-keyed inverse of write_sensitivity_tables."""
    by_group: dict[str, dict[tuple[str, int, str, int], float]] = {}
    for group, key, value in _read_sensitivity_rows(path):
        by_group.setdefault(group, {})[key] = value
    if not by_group:
        raise DataError(f"{path}: no entries")
    try:
        return {
            label: SensitivityTable(entries=entries, group_label=label)
            for label, entries in by_group.items()
        }
    except ParameterError as exc:
        raise DataError(f"{path}: {exc}") from None
