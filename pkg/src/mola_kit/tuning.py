"""Post-hoc prior precision selection by ascending grid search.

The curvature of each component is fixed; only the posterior factors are
rebuilt per candidate.  The grid is walked from small to large precision and
the first candidate whose validation mean confidence reaches the threshold
(and, optionally, whose Brier score stays under its threshold) wins.  Small
precisions mean wide posteriors and heavy confidence damping, so the chosen
value is the most uncertain setting that is still confident enough on
in-distribution data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .laplace import LaplaceComponent, refit
from .metrics import PredictionBatch, brier, mmc
from .mixture import assemble, mola_predict, predict_dataset
from .nn import Dataset


class EmptyValidation(Exception):
    pass


@dataclass(frozen=True)
class TuneConfig:
    grid_start: float = 1e-4
    grid_end: float = 1e3
    grid_steps: int = 100
    conf_threshold: float = 0.9
    brier_threshold: float | None = None  # optional gate, off by default
    val_size: int = 200

    def __post_init__(self):
        if self.grid_start >= self.grid_end:
            raise ValueError("grid_start must be < grid_end")
        if self.grid_steps < 2:
            raise ValueError("grid_steps must be >= 2")

    def grid(self) -> np.ndarray:
        return np.logspace(
            np.log10(self.grid_start), np.log10(self.grid_end), self.grid_steps
        )


@dataclass(frozen=True)
class TuneResult:
    prior_precision: float
    threshold_met: bool  # False means the walk exhausted the grid
    val_mmc: float
    val_brier: float
    components: tuple[LaplaceComponent, ...]  # refit at the chosen precision


def _mixture_scores(components, val: Dataset, method: str, mc_samples: int, seed: int):
    model = assemble(components)
    probs = predict_dataset(
        lambda x: mola_predict(model, x, method=method, n_samples=mc_samples, seed=seed),
        val.X,
    )
    batch = PredictionBatch(probs, val.y)
    return mmc(batch), brier(batch)


def tune_prior_precision(
    components: list[LaplaceComponent],
    val: Dataset,
    tcfg: TuneConfig,
    train: Dataset | None = None,
    method: str = "probit",
    mc_samples: int = 100,
    seed: int = 0,
) -> TuneResult:
    """Walk the log grid upward and return the smallest precision meeting the
    thresholds; if none qualifies, return the grid end flagged.

    ``train`` is the dataset whose size and likelihood enter the refit
    evidence; it defaults to the validation set only when omitted, which
    callers fitting on separate training data should not rely on.
    """
    if val.n < 1:
        raise EmptyValidation("validation set is empty")
    if not components:
        raise ValueError("need at least one component")
    evidence_data = train if train is not None else val

    last = None
    for lam in tcfg.grid():
        cand = [refit(c, evidence_data, float(lam)) for c in components]
        val_mmc, val_brier = _mixture_scores(cand, val, method, mc_samples, seed)
        last = TuneResult(
            prior_precision=float(lam),
            threshold_met=True,
            val_mmc=val_mmc,
            val_brier=val_brier,
            components=tuple(cand),
        )
        if val_mmc >= tcfg.conf_threshold and (
            tcfg.brier_threshold is None or val_brier <= tcfg.brier_threshold
        ):
            return last
    return TuneResult(
        prior_precision=last.prior_precision,
        threshold_met=False,
        val_mmc=last.val_mmc,
        val_brier=last.val_brier,
        components=last.components,
    )
