"""Scoring and calibration metrics for probabilistic classifiers.

Conventions fixed here so numbers are reproducible bit for bit:

* log-likelihood is natural log, averaged per example, reported negated
  (lower is better), with probabilities clamped below at 1e-12;
* calibration errors use equal-width bins over [0, 1] of the top-class
  probability (15 by default), confidence exactly 1.0 falling in the top bin;
* the OOD score of an example is its top-class probability, in-distribution
  counting as the positive class, ties at half credit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

PROB_CLAMP = 1e-12
DEFAULT_BINS = 15

# Fixed column order for every metrics CSV this package emits.
CSV_COLUMNS = (
    "method",
    "dataset",
    "severity",
    "seed",
    "accuracy",
    "nll",
    "brier",
    "ece",
    "mce",
    "mmc",
    "auroc",
)


class MissingLabels(Exception):
    pass


class EmptyInput(Exception):
    pass


@dataclass(frozen=True)
class PredictionBatch:
    """Rows of class probabilities, optionally with integer labels."""

    probs: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError(f"probs must be a nonempty N x C matrix, got {p.shape}")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("probabilities outside [0, 1]")
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-8:
            raise ValueError("probability rows must sum to 1 within 1e-8")
        object.__setattr__(self, "probs", p)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (p.shape[0],):
                raise ValueError("labels must match the number of rows")
            if y.min() < 0 or y.max() >= p.shape[1]:
                raise ValueError("labels out of range")
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    nll: float
    brier: float
    ece: float
    mce: float
    mmc: float
    n: int


def _require_labels(batch: PredictionBatch) -> np.ndarray:
    if batch.labels is None:
        raise MissingLabels("metric requires labels")
    return batch.labels


def accuracy(batch: PredictionBatch) -> float:
    y = _require_labels(batch)
    return float((batch.probs.argmax(axis=1) == y).mean())


def nll(batch: PredictionBatch) -> float:
    """Mean negative log-probability of the true class, clamped at 1e-12."""
    y = _require_labels(batch)
    p = np.maximum(batch.probs[np.arange(batch.n), y], PROB_CLAMP)
    return float(-np.log(p).mean())


def brier(batch: PredictionBatch) -> float:
    """Mean squared distance between the probability row and the one-hot label."""
    y = _require_labels(batch)
    onehot = np.zeros_like(batch.probs)
    onehot[np.arange(batch.n), y] = 1.0
    return float(((batch.probs - onehot) ** 2).sum(axis=1).mean())


def _bin_stats(batch: PredictionBatch, bins: int):
    if bins < 1:
        raise ValueError("bins must be >= 1")
    y = _require_labels(batch)
    conf = batch.probs.max(axis=1)
    correct = (batch.probs.argmax(axis=1) == y).astype(np.float64)
    # equal-width bins on [0, 1]; confidence 1.0 lands in the top bin
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    occupied = counts > 0
    gaps = np.zeros(bins)
    gaps[occupied] = np.abs(
        acc_sum[occupied] / counts[occupied] - conf_sum[occupied] / counts[occupied]
    )
    return counts, gaps


def ece(batch: PredictionBatch, bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error: count-weighted mean of per-bin
    |accuracy - confidence|; empty bins contribute nothing."""
    counts, gaps = _bin_stats(batch, bins)
    return float((counts / batch.n) @ gaps)


def mce(batch: PredictionBatch, bins: int = DEFAULT_BINS) -> float:
    """Maximum calibration error: worst per-bin |accuracy - confidence|."""
    counts, gaps = _bin_stats(batch, bins)
    occupied = counts > 0
    return float(gaps[occupied].max()) if occupied.any() else 0.0


def mmc(batch: PredictionBatch) -> float:
    """Mean maximum confidence; labels not required."""
    return float(batch.probs.max(axis=1).mean())


def auroc(scores_in, scores_out) -> float:
    """Probability that an in-distribution score exceeds an OOD score, ties
    counted half.  Computed from rank statistics (Mann-Whitney U), which is
    exactly the pairwise count."""
    a = np.asarray(scores_in, dtype=np.float64)
    b = np.asarray(scores_out, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyInput("both score sets must be nonempty")
    ranks = rankdata(np.concatenate([a, b]), method="average")
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def evaluate(probs, labels, bins: int = DEFAULT_BINS) -> MetricsReport:
    """All label-based metrics plus MMC for one prediction matrix."""
    batch = PredictionBatch(np.asarray(probs), np.asarray(labels))
    return MetricsReport(
        accuracy=accuracy(batch),
        nll=nll(batch),
        brier=brier(batch),
        ece=ece(batch, bins),
        mce=mce(batch, bins),
        mmc=mmc(batch),
        n=batch.n,
    )


def format_csv_value(value) -> str:
    """Fixed float formatting so reruns produce byte-identical CSV files."""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def csv_row(
    method,
    dataset,
    severity,
    seed,
    report: MetricsReport | None = None,
    mmc_value=None,
    auroc_value=None,
):
    """One CSV row in the fixed column order; absent fields are empty.

    Unlabeled evaluations (OOD sets) pass ``mmc_value``/``auroc_value``
    directly instead of a full report."""
    fields = {
        "method": method,
        "dataset": dataset,
        "severity": severity,
        "seed": seed,
        "accuracy": "",
        "nll": "",
        "brier": "",
        "ece": "",
        "mce": "",
        "mmc": "" if mmc_value is None else mmc_value,
        "auroc": "" if auroc_value is None else auroc_value,
    }
    if report is not None:
        fields.update(
            accuracy=report.accuracy,
            nll=report.nll,
            brier=report.brier,
            ece=report.ece,
            mce=report.mce,
            mmc=report.mmc,
        )
    return [format_csv_value(fields[col]) for col in CSV_COLUMNS]
