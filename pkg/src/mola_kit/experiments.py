"""End-to-end experiment pipelines over synthetic data.

One pipeline run trains an ensemble on fixed blobs, fits a Laplace component
per member, tunes a single shared prior precision on a validation split of
the test data, and evaluates four predictors (single MAP net, deep ensemble,
single-component Laplace, mixture) under increasing shift, against outlier
sets, across curvature/predictive variants, and over ensemble sizes.

Configuration is a strict, versioned JSON document: unknown keys are errors.
Outputs are CSV files with the fixed column order from the metrics module;
float formatting is pinned so identical configs produce identical bytes.
Setting MOLA_KIT_THREADS >= 2 evaluates seeds in parallel threads; rows are
always written in seed order, so the output does not depend on it.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics
from .datasets import ShiftSpec, apply_shift, make_blobs, make_ood, train_val_split
from .laplace import STRUCTURES, fit
from .metrics import CSV_COLUMNS, evaluate, format_csv_value
from .mixture import assemble, de_predict, map_predict, mola_predict, predict_dataset
from .nn import Dataset, MlpConfig, TrainConfig, train_ensemble
from .tuning import TuneConfig, tune_prior_precision

CONFIG_FORMAT_VERSION = 1

# Data generation and run seeds are decoupled: blobs stay fixed across runs
# while member training seeds are salted per run so they never collide.
_TRAIN_SEED_STRIDE = 1000
_DATA_SEED_TRAIN = 11
_DATA_SEED_TEST = 12
_VAL_SPLIT_SEED = 13
_OOD_SEED = 14
_SHIFT_SEED = 15

METHODS = ("MAP", "DE", "LLLA", "MoLA")


class ConfigError(Exception):
    pass


def _take(doc: dict, context: str, **fields):
    """Pull typed fields out of a dict, rejecting unknown keys."""
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    out = {}
    for name, default in fields.items():
        if name in doc:
            out[name] = doc[name]
        elif default is _REQUIRED:
            raise ConfigError(f"{context}: missing required key {name!r}")
        else:
            out[name] = default
    return out


_REQUIRED = object()


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 3
    n_train: int = 600
    n_test: int = 1200
    dim: int = 2
    spread: float = 0.6
    radius: float = 4.0


@dataclass(frozen=True)
class LaplaceSpec:
    structure: str = "kfac"
    kfac_beta: float = 0.99
    kfac_batch_size: int | None = None

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown hessian structure {self.structure!r}")


@dataclass(frozen=True)
class TuneSpec:
    grid_start: float = 1e-4
    grid_end: float = 1e3
    grid_steps: int = 100
    conf_threshold: float | None = None  # None: MAP validation accuracy - 0.01
    brier_threshold: float | None = None
    val_fraction: float = 0.2
    val_size: int = 400


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = DatasetSpec()
    hidden_dims: tuple[int, ...] = (32, 32)
    use_bias: bool = True
    train: TrainConfig = TrainConfig(
        epochs=150, batch_size=32, learning_rate=5e-3, weight_decay=1.0, optimizer="adam"
    )
    laplace: LaplaceSpec = LaplaceSpec()
    ensemble_size: int = 5
    predictive: str = "probit"
    mc_samples: int = 100
    tune: TuneSpec = TuneSpec()
    shift_kind: str = "rotate"
    ood_kinds: tuple[str, ...] = ("far_box", "extra_blob")
    ood_n: int = 400
    bound_deltas: tuple[float, ...] = (1e2, 1e3, 1e4, 1e5, 1e6)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.predictive not in ("probit", "mc"):
            raise ConfigError(f"unknown predictive {self.predictive!r}")

    def mlp_config(self) -> MlpConfig:
        return MlpConfig(
            input_dim=self.dataset.dim,
            hidden_dims=self.hidden_dims,
            num_classes=self.dataset.num_classes,
            use_bias=self.use_bias,
        )


def config_from_dict(doc: dict) -> ExperimentConfig:
    top = _take(
        doc,
        "config",
        format_version=_REQUIRED,
        dataset={},
        model={},
        train={},
        laplace={},
        ensemble_size=5,
        predictive="probit",
        mc_samples=100,
        tune={},
        shift={},
        ood={},
        bound_check={},
        seeds=[0, 1, 2, 3, 4],
    )
    if top["format_version"] != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {top['format_version']!r}")
    try:
        dataset = DatasetSpec(
            **_take(
                top["dataset"],
                "dataset",
                num_classes=3,
                n_train=600,
                n_test=1200,
                dim=2,
                spread=0.6,
                radius=4.0,
            )
        )
        model = _take(top["model"], "model", hidden_dims=[32, 32], use_bias=True)
        train = TrainConfig(
            **_take(
                top["train"],
                "train",
                epochs=150,
                batch_size=32,
                learning_rate=5e-3,
                weight_decay=1.0,
                optimizer="adam",
                seed=0,
            )
        )
        laplace = LaplaceSpec(
            **_take(
                top["laplace"],
                "laplace",
                structure="kfac",
                kfac_beta=0.99,
                kfac_batch_size=None,
            )
        )
        tune = TuneSpec(
            **_take(
                top["tune"],
                "tune",
                grid_start=1e-4,
                grid_end=1e3,
                grid_steps=100,
                conf_threshold=None,
                brier_threshold=None,
                val_fraction=0.2,
                val_size=400,
            )
        )
        shift = _take(top["shift"], "shift", kind="rotate")
        ood = _take(top["ood"], "ood", kinds=["far_box", "extra_blob"], n=400)
        bound = _take(top["bound_check"], "bound_check", deltas=[1e2, 1e3, 1e4, 1e5, 1e6])
        return ExperimentConfig(
            dataset=dataset,
            hidden_dims=tuple(model["hidden_dims"]),
            use_bias=bool(model["use_bias"]),
            train=train,
            laplace=laplace,
            ensemble_size=int(top["ensemble_size"]),
            predictive=top["predictive"],
            mc_samples=int(top["mc_samples"]),
            tune=tune,
            shift_kind=shift["kind"],
            ood_kinds=tuple(ood["kinds"]),
            ood_n=int(ood["n"]),
            bound_deltas=tuple(float(d) for d in bound["deltas"]),
            seeds=tuple(int(s) for s in top["seeds"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(doc)


def default_config_dict() -> dict:
    return {"format_version": CONFIG_FORMAT_VERSION}


# --------------------------------------------------------------------------
# Shared pipeline pieces
# --------------------------------------------------------------------------


def make_splits(cfg: ExperimentConfig):
    """(train, eval, val) datasets; the validation split is carved out of the
    test sample, leaving ``eval`` untouched for metric rows."""
    d = cfg.dataset
    train = make_blobs(d.num_classes, d.n_train, d.dim, d.spread, _DATA_SEED_TRAIN, d.radius)
    test = make_blobs(d.num_classes, d.n_test, d.dim, d.spread, _DATA_SEED_TEST, d.radius)
    eval_set, val = train_val_split(
        test, cfg.tune.val_fraction, _VAL_SPLIT_SEED, cfg.tune.val_size
    )
    return train, eval_set, val


@dataclass
class FittedPipeline:
    seed: int
    nets: list
    train_data: Dataset
    eval_data: Dataset
    val_data: Dataset
    mola_components: tuple
    llla_components: tuple
    mola_precision: float
    llla_precision: float
    tune_flagged: bool
    conf_threshold: float


def _auto_conf_threshold(cfg: ExperimentConfig, nets, val: Dataset) -> float:
    if cfg.tune.conf_threshold is not None:
        return cfg.tune.conf_threshold
    probs = predict_dataset(lambda x: map_predict(nets[0], x), val.X)
    map_acc = float((probs.argmax(axis=1) == val.y).mean())
    floor = 1.0 / cfg.dataset.num_classes + 1e-3
    return min(max(map_acc - 0.01, floor), 0.999)


def fit_pipeline(cfg: ExperimentConfig, seed: int) -> FittedPipeline:
    """Train, fit, and tune everything one run needs."""
    train_data, eval_data, val_data = make_splits(cfg)
    tcfg = replace(cfg.train, seed=cfg.train.seed + _TRAIN_SEED_STRIDE * seed)
    nets = train_ensemble(cfg.mlp_config(), tcfg, train_data, cfg.ensemble_size)

    components = [
        fit(
            net,
            train_data,
            structure=cfg.laplace.structure,
            prior_precision=1.0,
            kfac_beta=cfg.laplace.kfac_beta,
            kfac_batch_size=cfg.laplace.kfac_batch_size,
            kfac_seed=0,
        )
        for net in nets
    ]

    threshold = _auto_conf_threshold(cfg, nets, val_data)
    tune_cfg = TuneConfig(
        grid_start=cfg.tune.grid_start,
        grid_end=cfg.tune.grid_end,
        grid_steps=cfg.tune.grid_steps,
        conf_threshold=threshold,
        brier_threshold=cfg.tune.brier_threshold,
        val_size=cfg.tune.val_size,
    )
    mola_tuned = tune_prior_precision(
        components, val_data, tune_cfg, train=train_data,
        method=cfg.predictive, mc_samples=cfg.mc_samples,
    )
    llla_tuned = tune_prior_precision(
        components[:1], val_data, tune_cfg, train=train_data,
        method=cfg.predictive, mc_samples=cfg.mc_samples,
    )
    return FittedPipeline(
        seed=seed,
        nets=nets,
        train_data=train_data,
        eval_data=eval_data,
        val_data=val_data,
        mola_components=mola_tuned.components,
        llla_components=llla_tuned.components,
        mola_precision=mola_tuned.prior_precision,
        llla_precision=llla_tuned.prior_precision,
        tune_flagged=not (mola_tuned.threshold_met and llla_tuned.threshold_met),
        conf_threshold=threshold,
    )


def method_predictor(pipe: FittedPipeline, method: str, cfg: ExperimentConfig):
    """Per-point predictive for one of the four evaluated methods."""
    if method == "MAP":
        return lambda x: map_predict(pipe.nets[0], x)
    if method == "DE":
        return lambda x: de_predict(pipe.nets, x)
    if method == "LLLA":
        model = assemble(list(pipe.llla_components))
    elif method == "MoLA":
        model = assemble(list(pipe.mola_components))
    else:
        raise ValueError(f"unknown method {method!r}")
    return lambda x: mola_predict(
        model, x, method=cfg.predictive, n_samples=cfg.mc_samples, seed=0
    )


def _max_workers() -> int:
    raw = os.environ.get("MOLA_KIT_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _run_seeds(cfg: ExperimentConfig, per_seed):
    """Map ``per_seed(seed) -> rows`` over cfg.seeds, optionally in parallel;
    the concatenation is always in seed order."""
    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(per_seed, cfg.seeds))
    else:
        results = [per_seed(s) for s in cfg.seeds]
    rows = []
    for chunk in results:
        rows.extend(chunk)
    return rows


class _CsvWriter:
    """Single serialized writer; rows are flushed as they arrive."""

    def __init__(self, path, columns=CSV_COLUMNS):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(columns)
        self._fh.flush()

    def write_rows(self, rows):
        for row in rows:
            self._writer.writerow(row)
        self._fh.flush()

    def close(self):
        self._fh.close()


def _write_summary(rows, path, group_cols=("method", "dataset", "severity")):
    """Mean and standard error over seeds for every numeric column."""
    idx = {c: i for i, c in enumerate(CSV_COLUMNS)}
    numeric = ("accuracy", "nll", "brier", "ece", "mce", "mmc", "auroc")
    groups: dict[tuple, dict[str, list[float]]] = {}
    order: list[tuple] = []
    for row in rows:
        key = tuple(row[idx[c]] for c in group_cols)
        if key not in groups:
            groups[key] = {m: [] for m in numeric}
            order.append(key)
        for m in numeric:
            cell = row[idx[m]]
            if cell != "":
                groups[key][m].append(float(cell))
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(group_cols) + ["metric", "mean", "stderr"])
        for key in order:
            for m in numeric:
                vals = groups[key][m]
                if not vals:
                    continue
                arr = np.array(vals)
                stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
                writer.writerow(
                    list(key)
                    + [m, format_csv_value(float(arr.mean())), format_csv_value(stderr)]
                )
    return path


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------


def run_shift_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """Evaluate every method at severities 0..5 of the configured shift.
    Writes shift_metrics.csv (one row per method, severity, seed) and
    shift_summary.csv (mean and stderr over seeds)."""
    out_dir = Path(out_dir)
    writer = _CsvWriter(out_dir / "shift_metrics.csv")

    def per_seed(seed: int):
        pipe = fit_pipeline(cfg, seed)
        chunk = []
        for severity in range(6):
            shifted = apply_shift(
                pipe.eval_data, ShiftSpec(cfg.shift_kind, severity), seed=_SHIFT_SEED
            )
            severity_rows = []
            for method in METHODS:
                probs = predict_dataset(method_predictor(pipe, method, cfg), shifted.X)
                report = evaluate(probs, shifted.y)
                severity_rows.append(
                    metrics.csv_row(method, "blobs", severity, seed, report=report)
                )
            if _max_workers() == 1:
                writer.write_rows(severity_rows)  # partial results survive aborts
            chunk.extend(severity_rows)
        return chunk

    rows = _run_seeds(cfg, per_seed)
    if _max_workers() > 1:
        writer.write_rows(rows)
    writer.close()
    _write_summary(rows, out_dir / "shift_summary.csv")
    return writer.path


def run_ood_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """In-distribution confidence plus per-outlier-set confidence and AUROC
    for every method; in-distribution examples are the positive class."""
    out_dir = Path(out_dir)
    writer = _CsvWriter(out_dir / "ood_metrics.csv")

    def per_seed(seed: int):
        pipe = fit_pipeline(cfg, seed)
        chunk = []
        ood_sets = {
            kind: make_ood(pipe.train_data, kind, n=cfg.ood_n, seed=_OOD_SEED)
            for kind in cfg.ood_kinds
        }
        for method in METHODS:
            predictor = method_predictor(pipe, method, cfg)
            in_probs = predict_dataset(predictor, pipe.eval_data.X)
            in_conf = in_probs.max(axis=1)
            report = evaluate(in_probs, pipe.eval_data.y)
            chunk.append(metrics.csv_row(method, "in_dist", 0, seed, report=report))
            for kind, ood_data in ood_sets.items():
                out_probs = predict_dataset(predictor, ood_data.X)
                out_conf = out_probs.max(axis=1)
                chunk.append(
                    metrics.csv_row(
                        method,
                        kind,
                        0,
                        seed,
                        mmc_value=float(out_conf.mean()),
                        auroc_value=metrics.auroc(in_conf, out_conf),
                    )
                )
        if _max_workers() == 1:
            writer.write_rows(chunk)
        return chunk

    rows = _run_seeds(cfg, per_seed)
    if _max_workers() > 1:
        writer.write_rows(rows)
    writer.close()
    _write_summary(rows, out_dir / "ood_summary.csv")
    return writer.path


VARIANTS = tuple(f"{s}_{m}" for s in STRUCTURES for m in ("mc", "mpa"))


def run_variation_study(cfg: ExperimentConfig, out_dir) -> Path:
    """Single-component study: every curvature structure crossed with both
    predictives, each variant tuned on the validation split, evaluated at
    severities 0..5."""
    out_dir = Path(out_dir)
    writer = _CsvWriter(out_dir / "variant_metrics.csv")

    def per_seed(seed: int):
        train_data, eval_data, val_data = make_splits(cfg)
        tcfg = replace(cfg.train, seed=cfg.train.seed + _TRAIN_SEED_STRIDE * seed)
        nets = train_ensemble(cfg.mlp_config(), tcfg, train_data, 1)
        threshold = _auto_conf_threshold(cfg, nets, val_data)
        tune_cfg = TuneConfig(
            grid_start=cfg.tune.grid_start,
            grid_end=cfg.tune.grid_end,
            grid_steps=cfg.tune.grid_steps,
            conf_threshold=threshold,
            brier_threshold=cfg.tune.brier_threshold,
            val_size=cfg.tune.val_size,
        )
        chunk = []
        for structure in STRUCTURES:
            base = fit(nets[0], train_data, structure=structure, prior_precision=1.0)
            for pred in ("mc", "mpa"):
                method = "probit" if pred == "mpa" else "mc"
                tuned = tune_prior_precision(
                    [base], val_data, tune_cfg, train=train_data,
                    method=method, mc_samples=cfg.mc_samples,
                )
                model = assemble(list(tuned.components))
                variant_rows = []
                for severity in range(6):
                    shifted = apply_shift(
                        eval_data, ShiftSpec(cfg.shift_kind, severity), seed=_SHIFT_SEED
                    )
                    probs = predict_dataset(
                        lambda x: mola_predict(
                            model, x, method=method, n_samples=cfg.mc_samples, seed=0
                        ),
                        shifted.X,
                    )
                    report = evaluate(probs, shifted.y)
                    variant_rows.append(
                        metrics.csv_row(
                            f"{structure}_{pred}", "blobs", severity, seed, report=report
                        )
                    )
                if _max_workers() == 1:
                    writer.write_rows(variant_rows)
                chunk.extend(variant_rows)
        return chunk

    rows = _run_seeds(cfg, per_seed)
    if _max_workers() > 1:
        writer.write_rows(rows)
    writer.close()
    _write_summary(rows, out_dir / "variant_summary.csv")
    return writer.path


def run_bound_check(cfg: ExperimentConfig, out_dir) -> Path:
    """Far-away confidence sweep: scale a training input by the configured
    deltas and record MAP confidence, mixture probit confidence, and the
    mixture ceiling.  Needs use_bias=false."""
    from .bounds import verify_far_away, write_bound_csv

    if cfg.use_bias:
        raise ConfigError("bound check requires model.use_bias = false")
    out_dir = Path(out_dir)
    pipe = fit_pipeline(cfg, cfg.seeds[0])
    model = assemble(list(pipe.mola_components))
    x_star = pipe.train_data.X[int(np.argmax(np.linalg.norm(pipe.train_data.X, axis=1)))]
    rows = verify_far_away(model, pipe.nets[0], x_star, sorted(cfg.bound_deltas))
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "bound_check.csv"
    write_bound_csv(rows, path)
    return path


def run_component_sweep(cfg: ExperimentConfig, out_dir, max_k: int = 10) -> Path:
    """Deep ensemble versus mixture as the member count grows 1..max_k;
    metrics are averaged over severities 0..5, one row per (method, K, seed)
    with K recorded in the dataset column."""
    out_dir = Path(out_dir)
    writer = _CsvWriter(out_dir / "sweep_metrics.csv")

    def per_seed(seed: int):
        big = replace(cfg, ensemble_size=max_k)
        pipe = fit_pipeline(big, seed)
        shifted_sets = [
            apply_shift(pipe.eval_data, ShiftSpec(cfg.shift_kind, s), seed=_SHIFT_SEED)
            for s in range(6)
        ]
        chunk = []
        for k in range(1, max_k + 1):
            predictors = {
                "DE": lambda x, k=k: de_predict(pipe.nets[:k], x),
                "MoLA": lambda x, k=k: mola_predict(
                    assemble(list(pipe.mola_components[:k])),
                    x,
                    method=cfg.predictive,
                    n_samples=cfg.mc_samples,
                    seed=0,
                ),
            }
            for method, predictor in predictors.items():
                reports = [
                    evaluate(predict_dataset(predictor, s.X), s.y) for s in shifted_sets
                ]
                avg = metrics.MetricsReport(
                    accuracy=float(np.mean([r.accuracy for r in reports])),
                    nll=float(np.mean([r.nll for r in reports])),
                    brier=float(np.mean([r.brier for r in reports])),
                    ece=float(np.mean([r.ece for r in reports])),
                    mce=float(np.mean([r.mce for r in reports])),
                    mmc=float(np.mean([r.mmc for r in reports])),
                    n=sum(r.n for r in reports),
                )
                chunk.append(metrics.csv_row(method, f"k={k}", 0, seed, report=avg))
        if _max_workers() == 1:
            writer.write_rows(chunk)
        return chunk

    rows = _run_seeds(cfg, per_seed)
    if _max_workers() > 1:
        writer.write_rows(rows)
    writer.close()
    _write_summary(rows, out_dir / "sweep_summary.csv", group_cols=("method", "dataset"))
    return writer.path
