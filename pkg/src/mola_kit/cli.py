"""Command-line interface.

Every subcommand reads a JSON experiment config (--config), with optional
overrides for the seed list (--seed) and the output directory (--out).
Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments, serialize
from .bounds import BiasedNetwork, SingularCovariance
from .datasets import InvalidConfig, UnsupportedDim
from .experiments import ConfigError, ExperimentConfig, load_config
from .laplace import InvalidPrior, NegativeVariance, fit
from .linalg import LinalgError
from .metrics import format_csv_value
from .mixture import assemble, mola_predict
from .nn import ConfigMismatch, train_ensemble

_CONFIG_ERRORS = (
    ConfigError,
    ConfigMismatch,
    InvalidConfig,
    UnsupportedDim,
    serialize.CheckpointError,
    FileNotFoundError,
    ValueError,
)
_NUMERICAL_ERRORS = (
    LinalgError,
    InvalidPrior,
    NegativeVariance,
    SingularCovariance,
    BiasedNetwork,
    FloatingPointError,
    np.linalg.LinAlgError,
)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _train_and_save(cfg: ExperimentConfig, out_dir: Path):
    train_data, _, _ = experiments.make_splits(cfg)
    tcfg = replace(cfg.train, seed=cfg.train.seed + 1000 * cfg.seeds[0])
    nets = train_ensemble(cfg.mlp_config(), tcfg, train_data, cfg.ensemble_size)
    paths = [
        serialize.save_net(net, out_dir / f"net_{i:02d}.json")
        for i, net in enumerate(nets)
    ]
    return nets, train_data, paths


def _cmd_train(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out)
    _, _, paths = _train_and_save(cfg, out_dir)
    for p in paths:
        print(p)
    return 0


def _cmd_fit_laplace(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out)
    nets, train_data, net_paths = _train_and_save(cfg, out_dir)
    components, comp_paths = [], []
    for i, (net, net_path) in enumerate(zip(nets, net_paths)):
        comp = fit(
            net,
            train_data,
            structure=cfg.laplace.structure,
            prior_precision=1.0,
            kfac_beta=cfg.laplace.kfac_beta,
            kfac_batch_size=cfg.laplace.kfac_batch_size,
        )
        components.append(comp)
        comp_paths.append(
            serialize.save_component(comp, out_dir / f"component_{i:02d}.json", net_path)
        )
    model = assemble(components)
    manifest = serialize.save_manifest(model, comp_paths, out_dir / "mixture.json")
    print(manifest)
    return 0


def _cmd_predict(args) -> int:
    cfg = _load(args)
    if args.mixture is None:
        raise ConfigError("predict requires --mixture <manifest.json>")
    if args.inputs is None:
        raise ConfigError('predict requires --inputs <json file with {"X": [[...], ...]}>')
    train_data, _, _ = experiments.make_splits(cfg)
    model = serialize.load_manifest(args.mixture, train_data)
    doc = json.loads(Path(args.inputs).read_text())
    X = np.asarray(doc["X"], dtype=np.float64)
    out_path = Path(args.out) / "predictions.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"p{c}" for c in range(model.num_classes)])
        for x in X:
            probs = mola_predict(
                model, x, method=cfg.predictive, n_samples=cfg.mc_samples, seed=0
            )
            writer.writerow([format_csv_value(float(p)) for p in probs])
    print(out_path)
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args)
    print(experiments.run_shift_experiment(cfg, args.out))
    return 0


def _cmd_ood(args) -> int:
    cfg = _load(args)
    print(experiments.run_ood_experiment(cfg, args.out))
    return 0


def _cmd_bound_check(args) -> int:
    cfg = _load(args)
    print(experiments.run_bound_check(cfg, args.out))
    return 0


def _cmd_variants(args) -> int:
    cfg = _load(args)
    print(experiments.run_variation_study(cfg, args.out))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    print(experiments.run_component_sweep(cfg, args.out, max_k=args.max_k))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mola-kit",
        description=(
            "Train small ReLU classifiers, fit last-layer Gaussian posteriors, "
            "and evaluate mixture predictives on synthetic benchmarks."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="replace the config's seed list")
        p.add_argument("--out", default="mola_out", help="output directory")

    p = sub.add_parser("train", help="train the ensemble and save network checkpoints")
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser(
        "fit-laplace", help="train, fit one posterior per member, save components and manifest"
    )
    common(p)
    p.set_defaults(func=_cmd_fit_laplace)

    p = sub.add_parser("predict", help="mixture predictions for inputs in a JSON file")
    common(p)
    p.add_argument("--mixture", default=None, help="mixture manifest from fit-laplace")
    p.add_argument("--inputs", default=None, help='JSON file {"X": [[...], ...]}')
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="shift experiment: metrics at severities 0..5")
    common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ood", help="outlier detection experiment: confidence and AUROC")
    common(p)
    p.set_defaults(func=_cmd_ood)

    p = sub.add_parser("bound-check", help="far-away confidence sweep (needs use_bias=false)")
    common(p)
    p.set_defaults(func=_cmd_bound_check)

    p = sub.add_parser("variants", help="curvature x predictive study for one component")
    common(p)
    p.set_defaults(func=_cmd_variants)

    p = sub.add_parser("sweep", help="deep ensemble vs mixture over member counts")
    common(p)
    p.add_argument("--max-k", type=int, default=10, help="largest member count")
    p.set_defaults(func=_cmd_sweep)

    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
