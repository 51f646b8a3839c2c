"""Gaussian-mixture posteriors over ensembles of fitted components.

A mixture is an ordered list of Laplace components plus nonnegative weights
summing to one.  Its predictive is the weighted sum of the per-component
predictives (probit or Monte Carlo); the plain deep-ensemble and single-MAP
predictives live here too so every baseline shares one code path.

Per-component contributions are accumulated with exact (compensated)
summation, so predictions are bit-identical under joint permutation of
components and weights.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .laplace import LaplaceComponent, mc_predict, output_gaussian, probit_predict
from .linalg import DimensionMismatch
from .nn import Mlp, forward, softmax


@dataclass(frozen=True)
class MixtureWeights:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("weights must be a nonempty vector")
        if np.any(v < 0):
            raise ValueError("weights must be nonnegative")
        if abs(math.fsum(v.tolist()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def weights_uniform(k: int) -> MixtureWeights:
    if k < 1:
        raise ValueError("need at least one component")
    return MixtureWeights(np.full(k, 1.0 / k))


def weights_evidence(components: list[LaplaceComponent]) -> MixtureWeights:
    """Weights proportional to each component's marginal likelihood,
    normalized via a log-sum-exp stabilized softmax.  A component flagged
    with -inf evidence gets weight zero."""
    lm = np.array([c.log_marglik for c in components], dtype=np.float64)
    if np.all(np.isneginf(lm)):
        raise ValueError("all components have -inf evidence")
    shifted = lm - lm[np.isfinite(lm)].max()
    w = np.exp(shifted)
    return MixtureWeights(w / w.sum())


@dataclass(frozen=True)
class MolaModel:
    """Components plus weights. All members must agree on input dim and class
    count; feature widths may differ per member."""

    components: tuple[LaplaceComponent, ...]
    weights: MixtureWeights

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ValueError("need at least one component")
        if len(comps) != len(self.weights):
            raise ValueError("component and weight counts differ")
        c0 = comps[0]
        for c in comps[1:]:
            if c.num_classes != c0.num_classes:
                raise DimensionMismatch("components disagree on class count")
            if c.net.config.input_dim != c0.net.config.input_dim:
                raise DimensionMismatch("components disagree on input dim")
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def num_classes(self) -> int:
        return self.components[0].num_classes


def assemble(components, weights: MixtureWeights | None = None) -> MolaModel:
    components = list(components)
    if weights is None:
        weights = weights_uniform(len(components))
    return MolaModel(tuple(components), weights)


def _component_seed(base_seed: int, comp: LaplaceComponent) -> int:
    """Seed for a component's MC draws, derived from its weight mean rather
    than its position so that permuting the mixture leaves results unchanged."""
    digest = hashlib.blake2b(
        np.ascontiguousarray(comp.w_map).tobytes(), digest_size=8
    ).digest()
    return (int.from_bytes(digest, "little") ^ (base_seed & 0xFFFFFFFFFFFFFFFF)) & (
        2**63 - 1
    )


def mola_predict(
    model: MolaModel,
    x,
    method: str = "probit",
    n_samples: int = 100,
    seed: int = 0,
) -> np.ndarray:
    """Mixture predictive: sum_k pi_k * predictive_k(x).

    ``method`` is "probit" (closed form) or "mc" (``n_samples`` draws per
    component, seeded per component)."""
    if method not in ("probit", "mc"):
        raise ValueError(f"unknown predictive method {method!r}")
    per_class: list[list[float]] = [[] for _ in range(model.num_classes)]
    for comp, pi in zip(model.components, model.weights.values):
        g = output_gaussian(comp, x)
        if method == "probit":
            p = probit_predict(g)
        else:
            p = mc_predict(g, n_samples=n_samples, seed=_component_seed(seed, comp))
        for c in range(model.num_classes):
            per_class[c].append(pi * p[c])
    return np.array([math.fsum(vals) for vals in per_class])


def map_predict(net: Mlp, x) -> np.ndarray:
    """Plain softmax of the network logits."""
    return softmax(forward(net, x))


def de_predict(nets: list[Mlp], x) -> np.ndarray:
    """Deep-ensemble predictive: uniform average of member softmax outputs."""
    if len(nets) < 1:
        raise ValueError("need at least one network")
    d0, c0 = nets[0].config.input_dim, nets[0].num_classes
    for net in nets[1:]:
        if net.config.input_dim != d0 or net.num_classes != c0:
            raise DimensionMismatch("ensemble members disagree on dims")
    per_class: list[list[float]] = [[] for _ in range(c0)]
    for net in nets:
        p = map_predict(net, x)
        for c in range(c0):
            per_class[c].append(p[c] / len(nets))
    return np.array([math.fsum(vals) for vals in per_class])


def predict_dataset(predict_one, X: np.ndarray) -> np.ndarray:
    """Stack a per-point predictive over the rows of X."""
    return np.stack([predict_one(x) for x in np.asarray(X, dtype=np.float64)])
