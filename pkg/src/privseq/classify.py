"""Downstream usability: subsample, normalize, kNN, leave-one-person-out.

The harness measures how much task signal survives privatization: each
subsampled time instance becomes one classification instance over the
included features, folds hold out every recording of one participant,
normalization is fit on training rows only, and accuracy is reported
both as the mean over folds and pooled over instances. Majority voting
aggregates instance predictions per recording.

All tie-breaking randomness flows through derived noise streams, so a
run is reproducible from the seed alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from privseq.core import Corpus, FeatureMatrix, ParameterError
from privseq.noise import NoiseSource

__all__ = [
    "decimate",
    "zscore_fit",
    "zscore_apply",
    "knn_predict",
    "ClassifierConfig",
    "FoldResult",
    "CvSummary",
    "lopo_cv",
]


def decimate(m: FeatureMatrix, window: int, mean_pool: bool = False) -> FeatureMatrix:
    """Shrink a recording to one row per non-overlapping window.

    Default keeps the first row of each window, preserving the feature
    values as observed; mean_pool averages the window instead. Output
    length is ceil(n / window).
    """
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if window == 1:
        return m
    if mean_pool:
        n = m.length
        rows = [
            m.values[s : min(s + window, n)].mean(axis=0) for s in range(0, n, window)
        ]
        values = np.stack(rows)
    else:
        values = m.values[::window]
    return FeatureMatrix(
        recording_id=m.recording_id,
        participant_id=m.participant_id,
        labels=m.labels,
        feature_names=m.feature_names,
        values=values,
    )


def zscore_fit(rows: Sequence[Sequence[float]] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and population standard deviation.

    A constant dimension gets sd 0.0, the marker zscore_apply reads to
    map that dimension to zero instead of dividing by it.
    """
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError(f"expected a 2-D row matrix, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ParameterError(f"normalization needs >= 2 rows, got {arr.shape[0]}")
    return arr.mean(axis=0), arr.std(axis=0)


def zscore_apply(
    rows: Sequence[Sequence[float]] | np.ndarray,
    means: np.ndarray,
    sds: np.ndarray,
) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    live = sds != 0.0
    out = np.zeros_like(arr, dtype=np.float64)
    np.divide(arr - means, sds, out=out, where=live)
    return out


def _vote(counts: np.ndarray, values: Sequence[str], src: NoiseSource) -> str:
    top = counts.max()
    tied = [values[i] for i in range(len(values)) if counts[i] == top]
    if len(tied) == 1:
        return tied[0]
    pick = int(src.generator().integers(0, len(tied)))
    return tied[pick]


def knn_predict(
    train: Sequence[tuple[Sequence[float], str]],
    query: Sequence[float],
    k: int,
    src: NoiseSource,
) -> str:
    """Plurality label of the k nearest training vectors (Euclidean).

    Neighbor order is stable in training index for equal distances; a
    tie among top label counts is broken uniformly at random from src.
    """
    if not train:
        raise ParameterError("knn needs a non-empty training set")
    if not 1 <= k <= len(train):
        raise ParameterError(f"k must be in [1, {len(train)}], got {k}")
    x = np.asarray([v for v, _ in train], dtype=np.float64)
    labels = [str(lab) for _, lab in train]
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or x.shape[1] != q.size:
        raise ParameterError("query dimension does not match the training vectors")
    d = x - q
    order = np.argsort(np.einsum("ij,ij->i", d, d), kind="stable")[:k]
    values = sorted(set(labels))
    index = {v: i for i, v in enumerate(values)}
    counts = np.bincount([index[labels[i]] for i in order], minlength=len(values))
    return _vote(counts, values, src)


@dataclass(frozen=True, slots=True)
class ClassifierConfig:
    """Subsampling window, window reduction, and neighbor count."""

    window: int = 10
    mean_pool: bool = False
    neighbors: int = 11

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")
        if self.neighbors < 1:
            raise ParameterError(f"neighbors must be >= 1, got {self.neighbors}")


@dataclass(frozen=True, slots=True)
class FoldResult:
    """Outcome of one held-out participant.

    voted_predictions holds one (recording_id, true, voted) triple per
    held-out recording and is empty unless majority voting was
    requested. A held-out participant can carry recordings with
    different true labels, so voting is per recording. The fitted
    normalization parameters are retained so a leak check can recompute
    them from training rows alone and compare.
    """

    held_out_participant: str
    instance_predictions: tuple[tuple[str, str], ...]
    voted_predictions: tuple[tuple[str, str, str], ...] = ()
    norm_means: tuple[float, ...] = ()
    norm_sds: tuple[float, ...] = ()

    @property
    def instance_accuracy(self) -> float:
        pairs = self.instance_predictions
        return sum(1 for t, p in pairs if t == p) / len(pairs)

    @property
    def voted_accuracy(self) -> float | None:
        if not self.voted_predictions:
            return None
        return sum(1 for _, t, v in self.voted_predictions if t == v) / len(
            self.voted_predictions
        )


@dataclass(frozen=True, slots=True)
class CvSummary:
    """Fold-mean accuracy is the headline number; pooled counts every
    instance (or recording) equally across folds."""

    folds: int
    instance_accuracy: float
    instance_accuracy_pooled: float
    voted_accuracy: float | None = None
    voted_accuracy_pooled: float | None = None


def lopo_cv(
    corpus: Corpus,
    label_kind: str,
    config: ClassifierConfig = ClassifierConfig(),
    majority: bool = False,
    src: NoiseSource = NoiseSource(0),
) -> tuple[tuple[FoldResult, ...], CvSummary]:
    """Leave-one-person-out cross-validation over subsampled instances.

    Each fold holds out all recordings of one participant, fits
    normalization on the remaining rows, and classifies every held-out
    instance with kNN. Tie-break streams are addressed by (fold,
    recording, instance), so results do not depend on evaluation order.
    """
    participants = corpus.participants()
    if len(participants) < 2:
        raise ParameterError("leave-one-person-out needs >= 2 participants")
    corpus.label_values(label_kind)  # validates presence on every recording
    features = corpus.included_features
    if not features:
        raise ParameterError("every feature is excluded")
    cols = [corpus.schema.index(f) for f in features]
    small = [decimate(m, config.window, config.mean_pool) for m in corpus.matrices]
    # column selection returns Fortran order; canonicalize so fitted
    # statistics match a row-major recomputation bit for bit
    rows = [np.ascontiguousarray(m.values[:, cols]) for m in small]

    folds: list[FoldResult] = []
    for fold_i, person in enumerate(participants):
        train_rows = []
        train_labels: list[str] = []
        for m, r in zip(small, rows):
            if m.participant_id != person:
                train_rows.append(r)
                train_labels.extend([m.labels[label_kind]] * r.shape[0])
        train_x = np.concatenate(train_rows, axis=0)
        if config.neighbors > train_x.shape[0]:
            raise ParameterError(
                f"neighbors={config.neighbors} exceeds {train_x.shape[0]} training rows"
            )
        means, sds = zscore_fit(train_x)
        train_x = zscore_apply(train_x, means, sds)
        values = sorted(set(train_labels))
        index = {v: i for i, v in enumerate(values)}
        codes = np.asarray([index[lab] for lab in train_labels])

        instance_preds: list[tuple[str, str]] = []
        voted: list[tuple[str, str, str]] = []
        for rec_i, (m, r) in enumerate(zip(small, rows)):
            if m.participant_id != person:
                continue
            truth = m.labels[label_kind]
            test_x = zscore_apply(r, means, sds)
            d2 = (
                np.sum(test_x * test_x, axis=1)[:, np.newaxis]
                - 2.0 * (test_x @ train_x.T)
                + np.sum(train_x * train_x, axis=1)
            )
            rec_preds: list[str] = []
            for q in range(test_x.shape[0]):
                order = np.argsort(d2[q], kind="stable")[: config.neighbors]
                counts = np.bincount(codes[order], minlength=len(values))
                rec_preds.append(
                    _vote(counts, values, src.derive(fold_i, rec_i, q))
                )
            instance_preds.extend((truth, p) for p in rec_preds)
            if majority:
                counts = np.bincount(
                    [index.get(p, -1) for p in rec_preds if p in index],
                    minlength=len(values),
                )
                voted.append(
                    (m.recording_id, truth, _vote(counts, values, src.derive(fold_i, rec_i)))
                )
        folds.append(
            FoldResult(
                held_out_participant=person,
                instance_predictions=tuple(instance_preds),
                voted_predictions=tuple(voted),
                norm_means=tuple(float(v) for v in means),
                norm_sds=tuple(float(v) for v in sds),
            )
        )

    inst_fold_mean = math.fsum(f.instance_accuracy for f in folds) / len(folds)
    total = sum(len(f.instance_predictions) for f in folds)
    correct = sum(
        1 for f in folds for t, p in f.instance_predictions if t == p
    )
    summary = CvSummary(
        folds=len(folds),
        instance_accuracy=inst_fold_mean,
        instance_accuracy_pooled=correct / total,
        voted_accuracy=(
            math.fsum(f.voted_accuracy for f in folds) / len(folds) if majority else None
        ),
        voted_accuracy_pooled=(
            sum(1 for f in folds for _, t, v in f.voted_predictions if t == v)
            / sum(len(f.voted_predictions) for f in folds)
            if majority
            else None
        ),
    )
    return tuple(folds), summary
