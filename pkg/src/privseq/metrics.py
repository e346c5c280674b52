"""Reconstruction-quality metrics, utility sweeps, correlation curves.

NMSE follows the normalized form literally: mean squared error divided
by the product of the two signal means. A noisy mean can make that
denominator negative or near zero; such rows are kept and flagged, and
aggregate means skip them while reporting how many were skipped.

The sweep runner measures mean utility per (mechanism, chunk size,
epsilon) over repeated noisy executions. Aggregation is two-stage: NMSE
cells (one per recording x run) are averaged per feature, per-feature
means are averaged across features, and the row's utility is the
reciprocal of that final mean. Noise streams are addressed by
(recording, feature, run), epsilon never enters a stream address, and
partial sums are merged in unit-index order, so sweeps are bitwise
reproducible and independent of worker count.
"""
from __future__ import annotations

import concurrent.futures
import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from privseq import transform
from privseq.core import (
    ChunkPlan,
    Corpus,
    DataError,
    InternalInvariantError,
    ParameterError,
    RealSeq,
)
from privseq.mechanisms import MECHANISMS, MechanismConfig, fpa_lambda
from privseq.noise import NoiseSource, unit_laplace
from privseq.sensitivity import DIFFERENCE, RAW, SensitivityTable, build_group_table

__all__ = [
    "nmse",
    "utility",
    "mean_utility",
    "corr_curve",
    "CorrelationCurve",
    "SweepRow",
    "UtilitySweep",
    "run_sweep",
    "write_sweep_csv",
    "load_sweep_csv",
    "write_correlation_csv",
    "render_value",
    "DEFAULT_EPSILONS",
    "DEFAULT_CHUNK_SIZES",
    "DEFAULT_RUNS",
]

DEFAULT_EPSILONS = (0.48, 2.4, 4.8, 24.0, 48.0)
DEFAULT_CHUNK_SIZES = (32, 64, 128)
DEFAULT_RUNS = 100

# Denominators smaller than this are treated as undefined rather than
# amplified into meaningless quotients.
_DENOM_FLOOR = 1e-12

_SWEEP_HEADER = (
    "mechanism",
    "chunk_size",
    "epsilon",
    "mean_utility",
    "mean_nmse",
    "runs",
    "flagged_rows",
)


def nmse(x: RealSeq, xt: RealSeq) -> float | None:
    """(1/n) sum (x - xt)^2 / (mean(x) * mean(xt)); None when the
    denominator magnitude is below 1e-12 (undefined)."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(xt, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ParameterError("nmse expects 1-D sequences")
    if a.shape != b.shape:
        raise ParameterError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 1:
        raise ParameterError("nmse needs at least one sample")
    den = float(np.mean(a)) * float(np.mean(b))
    if abs(den) < _DENOM_FLOOR:
        return None
    d = a - b
    return float(np.mean(d * d)) / den


def utility(x: RealSeq, xt: RealSeq) -> float | None:
    """1/nmse; math.inf for an exact reconstruction; None propagates."""
    value = nmse(x, xt)
    if value is None:
        return None
    if value == 0.0:
        return math.inf
    return 1.0 / value


def render_value(value: float | None) -> str:
    """Human rendering: None -> 'undefined', inf -> 'exact', else repr."""
    if value is None:
        return "undefined"
    if value == math.inf:
        return "exact"
    return repr(float(value))


def mean_utility(
    corpus: Corpus, noisy: Corpus, excluded: frozenset[str] | set[str] = frozenset()
) -> float:
    """Two-stage mean utility of a released corpus against its source:
    per-feature mean across recordings, then the unweighted mean across
    included features. Undefined pairs and exhausted features are
    skipped; if nothing remains the sweep is empty and that is an error.
    """
    if corpus.schema != noisy.schema:
        raise ParameterError("corpora have different schemas")
    if len(corpus.matrices) != len(noisy.matrices):
        raise ParameterError(
            f"corpora have {len(corpus.matrices)} and {len(noisy.matrices)} recordings"
        )
    for a, b in zip(corpus.matrices, noisy.matrices):
        if a.recording_id != b.recording_id:
            raise ParameterError(
                f"recording order mismatch: {a.recording_id!r} vs {b.recording_id!r}"
            )
        if a.values.shape != b.values.shape:
            raise ParameterError(f"recording {a.recording_id!r} changed shape")
    skip = set(corpus.excluded_features) | set(excluded)
    feature_means: list[float] = []
    for f, feature in enumerate(corpus.schema):
        if feature in skip:
            continue
        values = []
        for a, b in zip(corpus.matrices, noisy.matrices):
            u = utility(a.values[:, f], b.values[:, f])
            if u is not None:
                values.append(u)
        if values:
            feature_means.append(math.fsum(values) / len(values))
    if not feature_means:
        raise ParameterError("empty sweep: every feature excluded or undefined")
    return math.fsum(feature_means) / len(feature_means)


@dataclass(frozen=True, slots=True)
class CorrelationCurve:
    """Pearson correlation against a reference time index, per lag."""

    feature: str
    group_label: str
    reference_index: int
    points: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((int(d), float(r)) for d, r in self.points)
        for d, r in pts:
            if d < 0:
                raise ParameterError(f"negative lag {d}")
            if not -1.0 <= r <= 1.0:
                raise ParameterError(f"correlation {r} outside [-1, 1] at lag {d}")
        object.__setattr__(self, "points", pts)

    def r_at(self, delta_t: int) -> float:
        for d, r in self.points:
            if d == delta_t:
                return r
        raise ParameterError(f"no point at lag {delta_t}")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    den = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if den == 0.0:
        raise ParameterError("zero variance across the group; correlation undefined")
    r = float(np.sum(da * db)) / den
    return min(1.0, max(-1.0, r))


def corr_curve(
    group: Sequence[RealSeq],
    reference_index: int = 5,
    max_lag: int = 10,
    feature: str = "",
    group_label: str = "",
) -> CorrelationCurve:
    """Correlation across the group between the sample at the reference
    index and the sample at reference + delta_t, for each lag."""
    if reference_index < 0 or max_lag < 0:
        raise ParameterError("reference_index and max_lag must be >= 0")
    vecs = [np.asarray(v, dtype=np.float64) for v in group]
    if len(vecs) < 3:
        raise ParameterError(f"corr_curve needs a group of >= 3 signals, got {len(vecs)}")
    need = reference_index + max_lag + 1
    for v in vecs:
        if v.ndim != 1 or v.size < need:
            raise ParameterError(
                f"every signal must have length > {reference_index + max_lag}"
            )
    rows = np.stack([v[:need] for v in vecs])
    ref = rows[:, reference_index]
    points = [
        (dt, _pearson(ref, rows[:, reference_index + dt])) for dt in range(max_lag + 1)
    ]
    return CorrelationCurve(
        feature=feature,
        group_label=group_label,
        reference_index=reference_index,
        points=tuple(points),
    )


def write_correlation_csv(curve: CorrelationCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("delta_t", "r"))
        for d, r in curve.points:
            writer.writerow([d, repr(r)])


@dataclass(frozen=True, slots=True)
class SweepRow:
    """One sweep cell. mean_utility is the reciprocal of mean_nmse by
    construction; flagged_rows counts the NMSE cells (recording x run)
    skipped for a negative or undefined value."""

    mechanism: str
    chunk_size: int | None
    epsilon: float
    mean_utility: float
    mean_nmse: float
    runs: int
    flagged_rows: int

    def __post_init__(self) -> None:
        if self.mechanism not in MECHANISMS:
            raise ParameterError(f"unknown mechanism {self.mechanism!r}")
        if self.chunk_size is not None and self.chunk_size < 1:
            raise ParameterError(f"chunk_size must be positive, got {self.chunk_size}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.runs < 1:
            raise ParameterError(f"runs must be >= 1, got {self.runs}")
        if self.flagged_rows < 0:
            raise ParameterError("flagged_rows must be >= 0")
        if not self.mean_nmse >= 0:
            raise ParameterError(f"mean_nmse must be >= 0, got {self.mean_nmse}")
        if math.isfinite(self.mean_nmse) and self.mean_nmse > 0:
            if self.mean_utility != 1.0 / self.mean_nmse:
                raise InternalInvariantError(
                    "mean_utility must be the reciprocal of mean_nmse"
                )


@dataclass(frozen=True, slots=True)
class UtilitySweep:
    rows: tuple[SweepRow, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(self.rows))

    def row(self, mechanism: str, chunk_size: int | None, epsilon: float) -> SweepRow:
        for r in self.rows:
            if (
                r.mechanism == mechanism
                and r.chunk_size == chunk_size
                and r.epsilon == epsilon
            ):
                return r
        raise ParameterError(f"no row for ({mechanism}, {chunk_size}, {epsilon})")


def write_sweep_csv(sweep: UtilitySweep, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_HEADER)
        for r in sweep.rows:
            writer.writerow(
                [
                    r.mechanism,
                    "" if r.chunk_size is None else r.chunk_size,
                    repr(r.epsilon),
                    repr(r.mean_utility),
                    repr(r.mean_nmse),
                    r.runs,
                    r.flagged_rows,
                ]
            )


def load_sweep_csv(path) -> UtilitySweep:
    rows: list[SweepRow] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != _SWEEP_HEADER:
            raise DataError(f"{path}: expected header {','.join(_SWEEP_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(_SWEEP_HEADER):
                raise DataError(f"{path}: row {row_no}: wrong column count")
            try:
                rows.append(
                    SweepRow(
                        mechanism=row[0],
                        chunk_size=None if row[1] == "" else int(row[1]),
                        epsilon=float(row[2]),
                        mean_utility=float(row[3]),
                        mean_nmse=float(row[4]),
                        runs=int(row[5]),
                        flagged_rows=int(row[6]),
                    )
                )
            except (ValueError, ParameterError, InternalInvariantError) as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None
    return UtilitySweep(rows=tuple(rows))


def _sweep_configs(
    mechanisms: Sequence[str], chunk_sizes: Sequence[int]
) -> list[tuple[str, int | None]]:
    configs: list[tuple[str, int | None]] = []
    for mech in mechanisms:
        if mech not in MECHANISMS:
            raise ParameterError(f"unknown mechanism {mech!r}")
        if mech in ("lpa", "fpa"):
            configs.append((mech, None))
        else:
            for c in chunk_sizes:
                if c < 1:
                    raise ParameterError(f"chunk sizes must be positive, got {c}")
                configs.append((mech, int(c)))
    if not configs:
        raise ParameterError("empty sweep grid: no mechanisms")
    return configs


class _GroupContext:
    """Per-label precomputation shared by all units of that group:
    chunk plans and sensitivity tables for every configuration."""

    __slots__ = ("length", "plans", "deltas")

    def __init__(
        self,
        corpus: Corpus,
        label_kind: str,
        label_value: str,
        configs: Sequence[tuple[str, int | None]],
    ):
        group = corpus.group(label_kind, label_value)
        self.length = max(m.length for m in group)
        self.plans: dict[int | None, ChunkPlan] = {}
        # deltas[(config, feature)] -> list of per-chunk sensitivities
        self.deltas: dict[tuple[tuple[str, int | None], str], list[float]] = {}
        tables: dict[tuple[int | None, str, int], SensitivityTable] = {}
        for mech, c in configs:
            plan_key = None if mech in ("lpa", "fpa") else c
            if plan_key not in self.plans:
                self.plans[plan_key] = (
                    MechanismConfig(mechanism=mech, epsilon=1.0, chunk_size=c).plan_for(
                        self.length
                    )
                )
            domain = DIFFERENCE if mech == "dcfpa" else RAW
            norm = 1 if mech == "lpa" else 2
            tkey = (plan_key, domain, norm)
            if tkey not in tables:
                tables[tkey] = build_group_table(
                    corpus,
                    label_kind,
                    label_value,
                    self.plans[plan_key],
                    norms=(norm,),
                    domains=(domain,),
                )
            table = tables[tkey]
            for feature in corpus.schema:
                if feature in corpus.excluded_features:
                    continue
                self.deltas[((mech, c), feature)] = [
                    table.value(feature, ci, domain, norm)
                    for ci in range(len(self.plans[plan_key]))
                ]


def _chunk_ks(
    plan: ChunkPlan,
    k_table: Mapping[tuple[str, int], int] | None,
    feature: str,
) -> list[int]:
    lengths = plan.chunk_lengths()
    if k_table is None:
        return list(lengths)
    ks = []
    for ci, length in enumerate(lengths):
        key = (feature, ci)
        if key not in k_table:
            raise ParameterError(f"k table missing entry for {key}")
        k = int(k_table[key])
        if not 1 <= k <= length:
            raise ParameterError(f"k={k} out of [1, {length}] for {key}")
        ks.append(k)
    return ks


def _unit_cells(
    x: np.ndarray,
    ctx: _GroupContext,
    configs: Sequence[tuple[str, int | None]],
    epsilons: Sequence[float],
    runs: int,
    unit_src: NoiseSource,
    feature: str,
    k_table: Mapping[tuple[str, int], int] | None,
) -> dict[tuple[int, int], tuple[float, int, int]]:
    """All NMSE cells of one (recording, feature) unit.

    Returns {(config_index, epsilon_index): (nmse_sum, valid, skipped)}.
    Draw layout per run: one unit-Laplace vector of length 2N whose
    prefix slices reproduce, bit for bit, what the mechanism functions
    draw chunk by chunk from the same source.
    """
    n_orig = x.size
    big_n = ctx.length
    padded = np.zeros(big_n, dtype=np.float64)
    padded[:n_orig] = x
    draws = np.stack(
        [
            unit_laplace(unit_src.derive(run).generator(), 2 * big_n)
            for run in range(runs)
        ]
    )
    x_mean = float(np.mean(x))
    out: dict[tuple[int, int], tuple[float, int, int]] = {}

    for cfg_idx, (mech, c) in enumerate(configs):
        plan_key = None if mech in ("lpa", "fpa") else c
        plan = ctx.plans[plan_key]
        deltas = ctx.deltas[((mech, c), feature)]
        if mech == "lpa":
            base_noise = draws[:, :big_n]
            for e_idx, eps in enumerate(epsilons):
                lam = deltas[0] / eps if deltas[0] > 0 else 0.0
                xt = padded + lam * base_noise if lam > 0 else np.broadcast_to(padded, (runs, big_n))
                out[(cfg_idx, e_idx)] = _nmse_cells(x, x_mean, xt[:, :n_orig])
            continue

        ks = _chunk_ks(plan, k_table, feature)
        lengths = plan.chunk_lengths()
        # Data spectra once per chunk; noise offsets follow the 2k-per-chunk
        # sequential draw layout of the mechanism implementations.
        spectra: list[np.ndarray] = []
        offsets: list[int] = []
        pos = 0
        for (s, e), k in zip(plan.boundaries, ks):
            seg = padded[s:e]
            if mech == "dcfpa":
                seg = transform.diff_transform(seg)
            spectra.append(transform.dft_batch(seg[np.newaxis, :])[0][:k])
            offsets.append(pos)
            pos += 2 * k
        for e_idx, eps in enumerate(epsilons):
            xt = np.empty((runs, big_n), dtype=np.float64)
            by_length: dict[int, list[tuple[int, np.ndarray]]] = {}
            for ci, ((s, e), k) in enumerate(zip(plan.boundaries, ks)):
                c_len = lengths[ci]
                lam = fpa_lambda(c_len, k, deltas[ci], eps)
                bins = np.zeros((runs, c_len), dtype=np.complex128)
                bins[:, :k] = spectra[ci]
                if lam > 0.0:
                    off = offsets[ci]
                    v = bins.view(np.float64)
                    v[:, 0 : 2 * k : 2] += lam * draws[:, off : off + k]
                    v[:, 1 : 2 * k : 2] += lam * draws[:, off + k : off + 2 * k]
                by_length.setdefault(c_len, []).append((ci, bins))
            for c_len, items in by_length.items():
                stacked = np.concatenate([b for _, b in items], axis=0)
                rec = transform.idft_batch(stacked).real
                for slot, (ci, _) in enumerate(items):
                    block = rec[slot * runs : (slot + 1) * runs]
                    if mech == "dcfpa":
                        block = np.cumsum(block, axis=1)
                    s, e = plan.boundaries[ci]
                    xt[:, s:e] = block
            out[(cfg_idx, e_idx)] = _nmse_cells(x, x_mean, xt[:, :n_orig])
    return out


def _nmse_cells(
    x: np.ndarray, x_mean: float, xt: np.ndarray
) -> tuple[float, int, int]:
    """(sum of valid NMSE cells, valid count, skipped count) for a
    (runs, n) block of reconstructions against the clean signal."""
    d = xt - x
    num = np.mean(d * d, axis=1)
    den = x_mean * np.mean(xt, axis=1)
    defined = np.abs(den) >= _DENOM_FLOOR
    values = np.divide(num, den, out=np.zeros_like(num), where=defined)
    valid = defined & (values >= 0.0)
    skipped = int(values.shape[0] - np.count_nonzero(valid))
    return float(np.sum(values[valid])), int(np.count_nonzero(valid)), skipped


def run_sweep(
    corpus: Corpus,
    label_kind: str,
    src: NoiseSource,
    mechanisms: Sequence[str] = MECHANISMS,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    chunk_sizes: Sequence[int] = DEFAULT_CHUNK_SIZES,
    runs: int = DEFAULT_RUNS,
    jobs: int = 1,
    k_tables: Mapping[str, Mapping[tuple[str, int], int]] | None = None,
) -> UtilitySweep:
    """Mean utility for every (mechanism, chunk size, epsilon) cell.

    k_tables optionally maps label value -> {(feature, chunk_index): k};
    absent entries default to full retention (k = chunk length).
    """
    if runs < 1:
        raise ParameterError(f"runs must be >= 1, got {runs}")
    if jobs < 1:
        raise ParameterError(f"jobs must be >= 1, got {jobs}")
    if not epsilons:
        raise ParameterError("empty sweep grid: no epsilons")
    eps = [float(e) for e in epsilons]
    for e in eps:
        if not (e > 0 and math.isfinite(e)):
            raise ParameterError(f"epsilons must be positive and finite, got {e}")
    configs = _sweep_configs(mechanisms, chunk_sizes)
    features = corpus.included_features
    if not features:
        raise ParameterError("empty sweep: every feature excluded")
    contexts = {
        value: _GroupContext(corpus, label_kind, value, configs)
        for value in corpus.label_values(label_kind)
    }

    units: list[tuple[int, int, str]] = []  # (recording index, feature col, label)
    feature_col = {f: corpus.schema.index(f) for f in features}
    for r, m in enumerate(corpus.matrices):
        for f in features:
            units.append((r, feature_col[f], m.labels[label_kind]))

    def run_unit(unit: tuple[int, int, str]):
        r, col, label = unit
        matrix = corpus.matrices[r]
        feature = corpus.schema[col]
        k_table = None if k_tables is None else k_tables.get(label)
        return _unit_cells(
            matrix.values[:, col],
            contexts[label],
            configs,
            eps,
            runs,
            src.derive(r, col),
            feature,
            k_table,
        )

    if jobs == 1:
        partials = [run_unit(u) for u in units]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            partials = list(pool.map(run_unit, units))

    # Merge in unit order so float accumulation never depends on scheduling.
    acc: dict[tuple[int, int, int], list[float]] = {}
    for (r, col, _), cells in zip(units, partials):
        for (cfg_idx, e_idx), (total, valid, skipped) in cells.items():
            slot = acc.setdefault((cfg_idx, e_idx, col), [0.0, 0, 0])
            slot[0] += total
            slot[1] += valid
            slot[2] += skipped

    rows: list[SweepRow] = []
    for cfg_idx, (mech, c) in enumerate(configs):
        for e_idx, e in enumerate(eps):
            feature_means: list[float] = []
            flagged = 0
            for f in features:
                col = feature_col[f]
                total, valid, skipped = acc.get((cfg_idx, e_idx, col), (0.0, 0, 0))
                flagged += skipped
                if valid > 0:
                    feature_means.append(total / valid)
            if not feature_means:
                raise ParameterError(
                    f"empty sweep cell ({mech}, {c}, {e}): all rows flagged"
                )
            mean_nmse = math.fsum(feature_means) / len(feature_means)
            mean_util = math.inf if mean_nmse == 0.0 else 1.0 / mean_nmse
            rows.append(
                SweepRow(
                    mechanism=mech,
                    chunk_size=c,
                    epsilon=e,
                    mean_utility=mean_util,
                    mean_nmse=mean_nmse,
                    runs=runs,
                    flagged_rows=flagged,
                )
            )
    return UtilitySweep(rows=tuple(rows))
