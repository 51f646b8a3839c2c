"""Versioned JSON checkpoints for networks, components, and mixtures.

Floats are serialized with Python's shortest round-trip repr (json default),
which preserves every bit of a float64 on reload.  Arrays are stored as
nested row-major lists.  Component checkpoints reference their feature
network by relative path rather than embedding it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .laplace import (
    DiagHessian,
    FullHessian,
    KfacFactors,
    LaplaceComponent,
    fit_from_hessian,
)
from .mixture import MixtureWeights, MolaModel, assemble
from .nn import Dataset, Mlp, MlpConfig

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def _check_version(doc: dict, path):
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format_version {doc.get('format_version')!r}"
        )


def _tolist(a: np.ndarray):
    return np.asarray(a, dtype=np.float64).tolist()


def save_net(net: Mlp, path) -> Path:
    path = Path(path)
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "mlp",
        "config": {
            "input_dim": net.config.input_dim,
            "hidden_dims": list(net.config.hidden_dims),
            "num_classes": net.config.num_classes,
            "use_bias": net.config.use_bias,
            "seed": net.config.seed,
        },
        "hidden_weights": [_tolist(w) for w in net.hidden_weights],
        "hidden_biases": None
        if net.hidden_biases is None
        else [_tolist(b) for b in net.hidden_biases],
        "head": _tolist(net.head),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_net(path) -> Mlp:
    path = Path(path)
    doc = json.loads(path.read_text())
    _check_version(doc, path)
    if doc.get("kind") != "mlp":
        raise CheckpointError(f"{path}: not a network checkpoint")
    cfg = MlpConfig(
        input_dim=doc["config"]["input_dim"],
        hidden_dims=tuple(doc["config"]["hidden_dims"]),
        num_classes=doc["config"]["num_classes"],
        use_bias=doc["config"]["use_bias"],
        seed=doc["config"]["seed"],
    )
    weights = tuple(np.array(w, dtype=np.float64) for w in doc["hidden_weights"])
    biases = (
        None
        if doc["hidden_biases"] is None
        else tuple(np.array(b, dtype=np.float64) for b in doc["hidden_biases"])
    )
    return Mlp(cfg, weights, biases, np.array(doc["head"], dtype=np.float64))


def _hessian_doc(hess):
    if hess.kind == "full":
        return {"structure": "full", "matrix": _tolist(hess.matrix)}
    if hess.kind == "kfac":
        return {"structure": "kfac", "a": _tolist(hess.a), "b": _tolist(hess.b)}
    return {"structure": "diag", "entries": _tolist(hess.entries)}


def _hessian_from_doc(doc):
    structure = doc["structure"]
    if structure == "full":
        return FullHessian(np.array(doc["matrix"], dtype=np.float64))
    if structure == "kfac":
        return KfacFactors(
            np.array(doc["a"], dtype=np.float64), np.array(doc["b"], dtype=np.float64)
        )
    if structure == "diag":
        return DiagHessian(np.array(doc["entries"], dtype=np.float64))
    raise CheckpointError(f"unknown structure {structure!r}")


def save_component(comp: LaplaceComponent, path, net_path) -> Path:
    """The referenced network checkpoint must already exist at ``net_path``
    (stored relative to the component file when possible)."""
    path, net_path = Path(path), Path(net_path)
    try:
        ref = str(net_path.relative_to(path.parent))
    except ValueError:
        ref = str(net_path)
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "laplace_component",
        "net_checkpoint": ref,
        "prior_precision": comp.prior_precision,
        "n_train": comp.n_train,
        "w_map": _tolist(comp.w_map),
        "hessian": _hessian_doc(comp.hess),
        "log_marglik": comp.log_marglik,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_component(path, data: Dataset) -> LaplaceComponent:
    """Rebuild a component from its checkpoint; posterior factors and the
    evidence are recomputed from the stored curvature on ``data``."""
    path = Path(path)
    doc = json.loads(path.read_text())
    _check_version(doc, path)
    if doc.get("kind") != "laplace_component":
        raise CheckpointError(f"{path}: not a component checkpoint")
    net = load_net(path.parent / doc["net_checkpoint"])
    comp = fit_from_hessian(
        net,
        data,
        _hessian_from_doc(doc["hessian"]),
        doc["prior_precision"],
        n_train=doc["n_train"],
    )
    stored = np.array(doc["w_map"], dtype=np.float64)
    if not np.array_equal(stored, comp.w_map):
        raise CheckpointError(f"{path}: stored weight mean disagrees with network head")
    return comp


def save_manifest(model: MolaModel, component_paths, path) -> Path:
    path = Path(path)
    refs = []
    for p in component_paths:
        p = Path(p)
        try:
            refs.append(str(p.relative_to(path.parent)))
        except ValueError:
            refs.append(str(p))
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "mixture_manifest",
        "components": refs,
        "weights": _tolist(model.weights.values),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_manifest(path, data: Dataset) -> MolaModel:
    path = Path(path)
    doc = json.loads(path.read_text())
    _check_version(doc, path)
    if doc.get("kind") != "mixture_manifest":
        raise CheckpointError(f"{path}: not a mixture manifest")
    comps = [load_component(path.parent / ref, data) for ref in doc["components"]]
    return assemble(comps, MixtureWeights(np.array(doc["weights"], dtype=np.float64)))
