"""Asymptotic confidence ceilings for bias-free ReLU classifiers.

For a network without biases, scaling an input x by delta > 0 never changes
the active-ReLU pattern, so the network is linear along the ray.  Under the
probit-damped predictive, each scaled logit |z_i(delta x)| then increases in
delta but stays below

    b_i = ||mu_i||_2 / sqrt((pi/8) * lambda_min(Sigma_i)),

where (mu_i, Sigma_i) is the Gaussian posterior over row i of the head.  The
top-class probability of a single component is therefore capped by

    1 / (1 + sum_{i != c*} exp(-(b_i + b_c*)))

and a mixture by the weight-averaged per-component caps.  The verifier in
this module sweeps delta over several decades and checks the cap, alongside
the plain MAP confidence for contrast (which saturates at 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .laplace import (
    LaplaceComponent,
    output_gaussian,
    posterior_covariance_dense,
    probit_predict,
    probit_scaled_logits,
)
from .mixture import MolaModel, map_predict, mola_predict
from .nn import Mlp, relu_pattern

SINGULAR_EIG_FLOOR = 1e-12


class SingularCovariance(Exception):
    """Row covariance has (numerically) zero smallest eigenvalue; the ceiling
    would be vacuous, so refuse instead of clamping."""


class BiasedNetwork(Exception):
    """The far-away analysis only holds for networks without biases."""


@dataclass(frozen=True)
class RowPosterior:
    """Gaussian over one row of the head weight matrix."""

    mean: np.ndarray  # (P,)
    cov: np.ndarray  # (P, P) symmetric PSD


def extract_row_posteriors(comp: LaplaceComponent) -> list[RowPosterior]:
    """Per-class row posteriors implied by the fitted component.

    full:  diagonal P x P blocks of the dense posterior covariance;
    kfac:  U_ii * V (exact under the Kronecker posterior);
    diag:  diagonal slice per class.
    """
    c, p = comp.num_classes, comp.feature_dim
    rows = []
    if comp.structure == "kfac":
        u, v = comp.factors
        for i in range(c):
            rows.append(RowPosterior(comp.w_map[i].copy(), u[i, i] * v))
    elif comp.structure == "diag":
        inv = comp.factors.reshape(c, p)
        for i in range(c):
            rows.append(RowPosterior(comp.w_map[i].copy(), np.diag(inv[i])))
    else:
        sigma = posterior_covariance_dense(comp)
        for i in range(c):
            block = sigma[i * p : (i + 1) * p, i * p : (i + 1) * p]
            rows.append(RowPosterior(comp.w_map[i].copy(), 0.5 * (block + block.T)))
    return rows


def bound_b(row: RowPosterior) -> float:
    """Per-class logit ceiling ||mu||_2 / sqrt((pi/8) lambda_min(Sigma))."""
    lam_min = linalg.min_eigenvalue_sym(row.cov)
    if lam_min <= SINGULAR_EIG_FLOOR:
        raise SingularCovariance(
            f"smallest eigenvalue {lam_min:.3e} at or below {SINGULAR_EIG_FLOOR:.0e}"
        )
    return float(np.linalg.norm(row.mean) / math.sqrt((math.pi / 8.0) * lam_min))


def lemma_bound(rows: list[RowPosterior], c_star: int) -> float:
    """Single-component confidence ceiling for predicted class ``c_star``."""
    if not 0 <= c_star < len(rows):
        raise ValueError(f"c_star {c_star} out of range for {len(rows)} classes")
    b = [bound_b(r) for r in rows]
    denom = 1.0 + math.fsum(
        math.exp(-(b[i] + b[c_star])) for i in range(len(rows)) if i != c_star
    )
    return 1.0 / denom


def component_bound(comp: LaplaceComponent, x=None) -> tuple[float, int]:
    """Confidence ceiling of one component and the class it was evaluated at.

    With ``x`` given, the class is the component's probit prediction at x
    (the setting of the far-away sweep).  Without an input the class
    maximizing the ceiling is used, which upper-bounds every choice.
    """
    rows = extract_row_posteriors(comp)
    if x is not None:
        c_star = int(np.argmax(probit_predict(output_gaussian(comp, x))))
        return lemma_bound(rows, c_star), c_star
    best = max(range(len(rows)), key=lambda c: lemma_bound(rows, c))
    return lemma_bound(rows, best), best


def theorem_bound(model: MolaModel, x=None) -> float:
    """Mixture confidence ceiling: weight-averaged per-component ceilings,
    each at that component's own predicted class (see ``component_bound``)."""
    terms = [
        pi * component_bound(comp, x)[0]
        for comp, pi in zip(model.components, model.weights.values)
    ]
    return math.fsum(terms)


@dataclass(frozen=True)
class BoundReport:
    """Everything the ceiling computation produces for one mixture at one
    input: per-component per-class b values (K x C), the per-component
    ceilings at their predicted classes, the weighted mixture ceiling, and
    the predicted classes themselves (per component and for the mixture)."""

    b_values: np.ndarray
    component_bounds: np.ndarray
    theorem_bound: float
    component_classes: tuple[int, ...]
    mixture_class: int


def bound_report(model: MolaModel, x) -> BoundReport:
    x = np.asarray(x, dtype=np.float64)
    b_rows = []
    bounds = []
    classes = []
    for comp in model.components:
        rows = extract_row_posteriors(comp)
        b_rows.append([bound_b(r) for r in rows])
        val, c_star = component_bound(comp, x)
        bounds.append(val)
        classes.append(c_star)
    mixture_class = int(np.argmax(mola_predict(model, x, method="probit")))
    total = math.fsum(
        pi * b for pi, b in zip(model.weights.values, bounds)
    )
    return BoundReport(
        b_values=np.array(b_rows),
        component_bounds=np.array(bounds),
        theorem_bound=total,
        component_classes=tuple(classes),
        mixture_class=mixture_class,
    )


def _require_no_bias(net: Mlp, name: str):
    if net.config.use_bias:
        raise BiasedNetwork(f"{name} has biases; the ceiling analysis needs use_bias=False")


@dataclass(frozen=True)
class BoundCheckRow:
    delta: float
    map_conf: float
    mola_conf: float
    theorem_bound: float
    region_stable: bool
    mc_conf: float  # informational; the ceiling is only asserted on the probit path


def verify_far_away(
    model: MolaModel,
    map_net: Mlp,
    x_star,
    deltas,
    mc_samples: int = 100,
    mc_seed: int = 0,
) -> list[BoundCheckRow]:
    """Sweep delta over ``deltas`` and report MAP confidence, mixture probit
    confidence, and the mixture ceiling at each scale.

    The linear-region onset is detected empirically: a delta is marked stable
    once the active-ReLU pattern of every involved network stops changing for
    all larger deltas on the grid.  From onset onward the probit confidence
    must not exceed the ceiling (within 1e-6); a violation raises.
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    if not x_star.any():
        raise ValueError("x_star must be nonzero")
    _require_no_bias(map_net, "map_net")
    for i, comp in enumerate(model.components):
        _require_no_bias(comp.net, f"component {i}")

    deltas = [float(d) for d in deltas]
    if sorted(deltas) != deltas:
        raise ValueError("deltas must be increasing")

    nets = [map_net] + [c.net for c in model.components]
    patterns = [
        tuple(relu_pattern(net, d * x_star) for net in nets) for d in deltas
    ]
    # stable[i]: pattern constant from grid point i to the end
    stable = [False] * len(deltas)
    ok = True
    for i in range(len(deltas) - 1, -1, -1):
        if i < len(deltas) - 1 and patterns[i] != patterns[i + 1]:
            ok = False
        stable[i] = ok

    rows = []
    for i, d in enumerate(deltas):
        x = d * x_star
        map_conf = float(map_predict(map_net, x).max())
        mola_conf = float(mola_predict(model, x, method="probit").max())
        mc_conf = float(
            mola_predict(model, x, method="mc", n_samples=mc_samples, seed=mc_seed).max()
        )
        ceiling = theorem_bound(model, x)
        if stable[i] and mola_conf > ceiling + 1e-6:
            raise AssertionError(
                f"probit confidence {mola_conf:.6f} exceeds ceiling "
                f"{ceiling:.6f} at delta={d:g} inside a stable region"
            )
        rows.append(
            BoundCheckRow(
                delta=d,
                map_conf=map_conf,
                mola_conf=mola_conf,
                theorem_bound=ceiling,
                region_stable=stable[i],
                mc_conf=mc_conf,
            )
        )
    return rows


def scaled_logits_per_component(model: MolaModel, x) -> list[np.ndarray]:
    """Probit-damped logit vectors of every component at x (diagnostics)."""
    return [
        probit_scaled_logits(output_gaussian(comp, x)) for comp in model.components
    ]


BOUND_CSV_COLUMNS = ("delta", "map_conf", "mola_conf", "theorem_bound", "region_stable")


def write_bound_csv(rows: list[BoundCheckRow], path):
    """Emit the sweep as CSV: delta,map_conf,mola_conf,theorem_bound,region_stable."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BOUND_CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    format(r.delta, ".12g"),
                    format(r.map_conf, ".12g"),
                    format(r.mola_conf, ".12g"),
                    format(r.theorem_bound, ".12g"),
                    str(r.region_stable).lower(),
                ]
            )
