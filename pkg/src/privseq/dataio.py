"""Corpus serialization and a synthetic correlated-corpus generator.

On-disk layout: a directory holding manifest.json, a schema file listing
one feature name per line, and one headered CSV per recording (one row
per time step, one column per feature). The manifest is the single
source of recording identity; nothing is parsed out of filenames.

Floats are rendered with repr, which Python guarantees to round-trip,
so write followed by load reproduces a corpus bit for bit.
"""
from __future__ import annotations

import concurrent.futures
import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from privseq.core import Corpus, DataError, FeatureMatrix, ParameterError
from privseq.mechanisms import MechanismReport
from privseq.noise import NoiseSource

__all__ = [
    "RecordingEntry",
    "CorpusManifest",
    "SynthSpec",
    "read_manifest",
    "load_corpus",
    "write_corpus",
    "synth_corpus",
    "MANIFEST_NAME",
    "SCHEMA_NAME",
    "REPORT_NAME",
]

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SCHEMA_NAME = "schema.txt"
REPORT_NAME = "report.json"


@dataclass(frozen=True, slots=True)
class RecordingEntry:
    """Manifest row: where one recording lives and who it belongs to.

    trim, when present, keeps only rows [start, end) of the stored CSV,
    for replicating evaluations that skip part of a recording.
    """

    file_path: str
    recording_id: str
    participant_id: str
    labels: Mapping[str, str]
    trim: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.file_path:
            raise ParameterError("manifest entry needs a file path")
        if not self.recording_id:
            raise ParameterError("manifest entry needs a recording_id")
        if not self.participant_id:
            raise ParameterError("manifest entry needs a participant_id")
        object.__setattr__(self, "labels", dict(self.labels))
        if self.trim is not None:
            start, end = int(self.trim[0]), int(self.trim[1])
            if start < 0 or end <= start:
                raise ParameterError(f"trim range [{start}, {end}) is empty or negative")
            object.__setattr__(self, "trim", (start, end))


@dataclass(frozen=True, slots=True)
class CorpusManifest:
    """Recording inventory plus schema location and time-step metadata."""

    recordings: tuple[RecordingEntry, ...]
    schema_path: str
    step_seconds: float = 1.0
    excluded_features: frozenset[str] = field(default_factory=frozenset)
    base_dir: str = "."

    def __post_init__(self) -> None:
        object.__setattr__(self, "recordings", tuple(self.recordings))
        object.__setattr__(self, "excluded_features", frozenset(self.excluded_features))
        if not self.schema_path:
            raise ParameterError("manifest needs a schema path")
        if not self.step_seconds > 0:
            raise ParameterError(f"step_seconds must be positive, got {self.step_seconds}")
        ids = [r.recording_id for r in self.recordings]
        if len(set(ids)) != len(ids):
            raise ParameterError("duplicate recording ids in manifest")
        kinds = None
        for r in self.recordings:
            have = frozenset(r.labels)
            if kinds is None:
                kinds = have
            elif have != kinds:
                raise ParameterError(
                    f"recording {r.recording_id!r} has label kinds {sorted(have)}, "
                    f"others have {sorted(kinds)}"
                )


def read_manifest(path) -> CorpusManifest:
    """Parse manifest.json; relative paths stay relative to its directory."""
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: manifest must be a JSON object")
    try:
        entries = []
        for i, rec in enumerate(raw["recordings"]):
            trim = rec.get("trim")
            entries.append(
                RecordingEntry(
                    file_path=rec["path"],
                    recording_id=rec["recording_id"],
                    participant_id=rec["participant_id"],
                    labels={str(k): str(v) for k, v in rec["labels"].items()},
                    trim=None if trim is None else (int(trim[0]), int(trim[1])),
                )
            )
        manifest = CorpusManifest(
            recordings=tuple(entries),
            schema_path=raw["schema"],
            step_seconds=float(raw.get("step_seconds", 1.0)),
            excluded_features=frozenset(raw.get("excluded_features", ())),
            base_dir=os.path.dirname(path) or ".",
        )
    except (KeyError, TypeError, ValueError, ParameterError) as exc:
        key = f" (missing key {exc})" if isinstance(exc, KeyError) else f": {exc}"
        raise DataError(f"{path}: malformed manifest{key}") from None
    return manifest


def _read_schema(path: str) -> tuple[str, ...]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            names = [line.strip() for line in fh if line.strip()]
    except FileNotFoundError:
        raise DataError(f"schema file not found: {path}") from None
    if not names:
        raise DataError(f"{path}: schema file lists no features")
    return tuple(names)


def _load_one(entry: RecordingEntry, schema: tuple[str, ...], base: str) -> FeatureMatrix:
    path = os.path.join(base, entry.file_path)
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty file")
            if tuple(header) != schema:
                raise DataError(
                    f"{path}: header does not match the schema "
                    f"(got {len(header)} columns starting {header[:3]})"
                )
            rows: list[list[float]] = []
            for row_no, row in enumerate(reader, start=2):
                if len(row) != len(schema):
                    raise DataError(
                        f"{path}: row {row_no}: expected {len(schema)} columns, got {len(row)}"
                    )
                parsed = []
                for col, cell in zip(schema, row):
                    try:
                        parsed.append(float(cell))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {row_no}: column {col!r}: not a number: {cell!r}"
                        ) from None
                rows.append(parsed)
    except FileNotFoundError:
        raise DataError(f"recording file not found: {path}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    if entry.trim is not None:
        start, end = entry.trim
        if end > values.shape[0]:
            raise DataError(
                f"{path}: trim [{start}, {end}) exceeds {values.shape[0]} rows"
            )
        values = values[start:end]
    try:
        return FeatureMatrix(
            recording_id=entry.recording_id,
            participant_id=entry.participant_id,
            labels=entry.labels,
            feature_names=schema,
            values=values,
        )
    except ParameterError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_corpus(manifest, jobs: int = 1) -> Corpus:
    """Assemble a Corpus from a manifest (object or path to one).

    Features that are zero everywhere across the whole load group are
    added to excluded_features with a logged notice; downstream
    sensitivity and utility aggregation skip them.
    """
    if not isinstance(manifest, CorpusManifest):
        manifest = read_manifest(manifest)
    schema = _read_schema(os.path.join(manifest.base_dir, manifest.schema_path))
    if jobs < 1:
        raise ParameterError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(manifest.recordings) <= 1:
        matrices = [_load_one(e, schema, manifest.base_dir) for e in manifest.recordings]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            matrices = list(
                pool.map(lambda e: _load_one(e, schema, manifest.base_dir), manifest.recordings)
            )
    excluded = set(manifest.excluded_features)
    if matrices:
        for j, feature in enumerate(schema):
            if feature in excluded:
                continue
            if all(not np.any(m.values[:, j]) for m in matrices):
                excluded.add(feature)
                logger.info(
                    "feature %r is zero everywhere; excluding it from sensitivity "
                    "and utility aggregation",
                    feature,
                )
    return Corpus(
        matrices=tuple(matrices), schema=schema, excluded_features=frozenset(excluded)
    )


def write_corpus(
    corpus: Corpus,
    out_dir,
    step_seconds: float = 1.0,
    reports: Mapping[str, MechanismReport] | None = None,
) -> CorpusManifest:
    """Write manifest, schema, and one CSV per recording into out_dir.

    Floats are rendered with repr so a subsequent load reproduces the
    corpus exactly. When reports are given (one per label group), a
    sibling report.json is written alongside the data.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, SCHEMA_NAME), "w", encoding="utf-8") as fh:
        for name in corpus.schema:
            fh.write(name + "\n")
    entries = []
    for m in corpus.matrices:
        file_name = f"{m.recording_id}.csv"
        with open(os.path.join(out_dir, file_name), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(corpus.schema)
            for row in m.values:
                writer.writerow([repr(float(v)) for v in row])
        entries.append(
            RecordingEntry(
                file_path=file_name,
                recording_id=m.recording_id,
                participant_id=m.participant_id,
                labels=m.labels,
            )
        )
    manifest = CorpusManifest(
        recordings=tuple(entries),
        schema_path=SCHEMA_NAME,
        step_seconds=step_seconds,
        excluded_features=corpus.excluded_features,
        base_dir=out_dir,
    )
    payload = {
        "schema": manifest.schema_path,
        "step_seconds": manifest.step_seconds,
        "excluded_features": sorted(manifest.excluded_features),
        "recordings": [
            {
                "path": e.file_path,
                "recording_id": e.recording_id,
                "participant_id": e.participant_id,
                "labels": dict(sorted(e.labels.items())),
            }
            for e in manifest.recordings
        ],
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if reports is not None:
        merged = {label: json.loads(r.to_json()) for label, r in reports.items()}
        with open(os.path.join(out_dir, REPORT_NAME), "w", encoding="utf-8") as fh:
            json.dump(merged, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return manifest


@dataclass(frozen=True, slots=True)
class SynthSpec:
    """Parameters of the synthetic correlated corpus.

    Per (participant, label, recording, feature) an order-1
    autoregressive signal is generated around the label's mean offset:
    x[0] = offset + sd*z, then x[t] = offset + rho*(x[t-1] - offset) +
    sd*sqrt(1 - rho^2)*z, which keeps the marginal variance sd^2 at
    every t and gives lag-d autocorrelation rho^d.
    """

    participants: int
    recordings_per_label: int
    labels: tuple[str, ...]
    length: int
    features: int
    ar_coefficient: float
    offsets: tuple[float, ...]
    noise_sd: float
    seed: int

    def __post_init__(self) -> None:
        if self.participants < 1:
            raise ParameterError(f"participants must be >= 1, got {self.participants}")
        if self.recordings_per_label < 1:
            raise ParameterError(
                f"recordings_per_label must be >= 1, got {self.recordings_per_label}"
            )
        labels = tuple(str(v) for v in self.labels)
        if not labels or len(set(labels)) != len(labels):
            raise ParameterError("labels must be non-empty and unique")
        if self.length < 1:
            raise ParameterError(f"length must be >= 1, got {self.length}")
        if self.features < 1:
            raise ParameterError(f"features must be >= 1, got {self.features}")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ParameterError(
                f"ar_coefficient must be in [0, 1), got {self.ar_coefficient}"
            )
        offsets = tuple(float(v) for v in self.offsets)
        if len(offsets) != len(labels):
            raise ParameterError(
                f"{len(offsets)} offsets for {len(labels)} labels"
            )
        if not self.noise_sd > 0:
            raise ParameterError(f"noise_sd must be positive, got {self.noise_sd}")
        if self.seed < 0:
            raise ParameterError(f"seed must be >= 0, got {self.seed}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "offsets", offsets)


def _ar1(offset: float, rho: float, sd: float, z: np.ndarray) -> np.ndarray:
    x = np.empty(z.size, dtype=np.float64)
    x[0] = offset + sd * z[0]
    if z.size > 1:
        step = sd * math.sqrt(1.0 - rho * rho)
        prev = x[0]
        for t in range(1, z.size):
            prev = offset + rho * (prev - offset) + step * z[t]
            x[t] = prev
    return x


def synth_corpus(spec: SynthSpec) -> Corpus:
    """Deterministic synthetic corpus; every signal gets its own stream
    addressed by (participant, label, recording, feature)."""
    root = NoiseSource(spec.seed)
    schema = tuple(f"f{j:02d}" for j in range(spec.features))
    matrices = []
    for p in range(spec.participants):
        for li, label in enumerate(spec.labels):
            for ri in range(spec.recordings_per_label):
                cols = []
                for f in range(spec.features):
                    gen = root.derive(p, li, ri, f).generator()
                    z = gen.standard_normal(spec.length)
                    cols.append(
                        _ar1(spec.offsets[li], spec.ar_coefficient, spec.noise_sd, z)
                    )
                matrices.append(
                    FeatureMatrix(
                        recording_id=f"p{p:02d}_{label}_r{ri}",
                        participant_id=f"p{p:02d}",
                        labels={"category": label},
                        feature_names=schema,
                        values=np.column_stack(cols),
                    )
                )
    return Corpus(matrices=tuple(matrices), schema=schema)
