"""Gaussian posteriors over the last-layer weight matrix.

The head is linear in its C x P weight matrix W, so the curvature of the
cross-entropy loss w.r.t. vec(W) is exactly the generalized Gauss-Newton

    H = sum_n  Lambda_n (x) phi_n phi_n^T,        Lambda_n = diag(p_n) - p_n p_n^T

with p_n the softmax at the fitted weights.  vec(W) is row-major throughout
this package: index (class i, feature j) maps to i * P + j, which makes the
class-space factor the left operand of every Kronecker product, and the
output-space Jacobian of the head equal to I_C (x) phi^T.

Three curvature representations are supported:

* full  - the dense CP x CP matrix above;
* kfac  - C x C and P x P running-average factors A ~ E[Lambda], B ~ E[phi phi^T],
          with damped inverses U = (sqrt(N) A + sqrt(lam) I)^-1 and
          V = (sqrt(N) B + sqrt(lam) I)^-1;
* diag  - the diagonal of the full matrix, computed directly.

A fitted component carries the frozen feature network, the weight mean, the
curvature, the precomputed posterior factors at a given prior precision, and
its log marginal likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import DimensionMismatch, SpdFactor
from .nn import Dataset, Mlp, features, forward, log_softmax, softmax


class InvalidPrior(Exception):
    """Prior precision must be strictly positive."""


class NegativeVariance(Exception):
    """Output variance below zero beyond round-off."""


# Variances in [-_VAR_ROUNDOFF, 0) are clamped to zero; anything lower raises.
_VAR_ROUNDOFF = 1e-12


# --------------------------------------------------------------------------
# Curvature structures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FullHessian:
    matrix: np.ndarray  # (CP, CP), symmetric PSD

    kind = "full"


@dataclass(frozen=True)
class KfacFactors:
    a: np.ndarray  # (C, C) class-space factor, ~ mean of Lambda_n
    b: np.ndarray  # (P, P) feature-space factor, ~ mean of phi phi^T

    kind = "kfac"


@dataclass(frozen=True)
class DiagHessian:
    entries: np.ndarray  # (CP,), nonnegative

    kind = "diag"


HessianStructure = FullHessian | KfacFactors | DiagHessian

STRUCTURES = ("full", "kfac", "diag")


def _class_curvature(probs: np.ndarray) -> np.ndarray:
    """Per-example Lambda = diag(p) - p p^T, stacked (N, C, C)."""
    eye = np.eye(probs.shape[1])
    return probs[:, :, None] * eye[None] - probs[:, :, None] * probs[:, None, :]


def ggn_full(net: Mlp, data: Dataset) -> np.ndarray:
    """Dense curvature sum_n Lambda_n (x) phi_n phi_n^T under row-major vec(W).

    Coincides with the exact Hessian of the total negative log-likelihood
    w.r.t. vec(W) because the head is linear.
    """
    phi = features(net, data.X)  # (N, P)
    probs = softmax(phi @ net.head.T)  # (N, C)
    lam = _class_curvature(probs)  # (N, C, C)
    outer = phi[:, :, None] * phi[:, None, :]  # (N, P, P)
    h = np.einsum("nab,nij->aibj", lam, outer)
    cp = net.num_classes * net.feature_dim
    h = h.reshape(cp, cp)
    return 0.5 * (h + h.T)


def ggn_diag(net: Mlp, data: Dataset) -> np.ndarray:
    """Diagonal of ggn_full, computed without materializing the full matrix:
    entry (i, j) is sum_n Lambda_n[i,i] * phi_n[j]^2."""
    phi = features(net, data.X)
    probs = softmax(phi @ net.head.T)
    lam_diag = probs * (1.0 - probs)  # (N, C)
    return np.einsum("nc,np->cp", lam_diag, phi**2).reshape(-1)


def ggn_kfac(
    net: Mlp,
    data: Dataset,
    beta: float = 0.99,
    batch_size: int | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Kronecker factors via exponential running averages over mini-batches.

    Per batch, the class factor is the batch mean of Lambda_n and the feature
    factor the batch mean of phi_n phi_n^T; both averages are updated as
    ``A <- beta A + (1 - beta) A_batch`` and debiased by 1 - beta^num_batches
    at the end.  The batch order is a seeded permutation, so the result is
    deterministic given (beta, batch_size, seed).
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must be in [0, 1)")
    n = data.n
    batch_size = min(n, 128) if batch_size is None else int(batch_size)
    order = np.random.default_rng(seed).permutation(n)

    c, p = net.num_classes, net.feature_dim
    a = np.zeros((c, c))
    b = np.zeros((p, p))
    num_batches = 0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        phi = features(net, data.X[idx])
        probs = softmax(phi @ net.head.T)
        a_batch = _class_curvature(probs).mean(axis=0)
        b_batch = (phi[:, :, None] * phi[:, None, :]).mean(axis=0)
        a = beta * a + (1.0 - beta) * a_batch
        b = beta * b + (1.0 - beta) * b_batch
        num_batches += 1

    debias = 1.0 - beta**num_batches
    a /= debias
    b /= debias
    return 0.5 * (a + a.T), 0.5 * (b + b.T)


# --------------------------------------------------------------------------
# Fitted component
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceComponent:
    """One Gaussian posterior N(vec(W) | vec(w_map), Sigma) over the head.

    ``factors`` holds the precomputed application of Sigma:
      full: SpdFactor of (H + lam I); kfac: dense inverses (U, V);
      diag: elementwise 1 / (d + lam).
    """

    net: Mlp
    w_map: np.ndarray  # (C, P)
    hess: HessianStructure
    prior_precision: float
    n_train: int
    factors: object
    log_marglik: float

    @property
    def num_classes(self) -> int:
        return self.net.num_classes

    @property
    def feature_dim(self) -> int:
        return self.net.feature_dim

    @property
    def structure(self) -> str:
        return self.hess.kind


@dataclass(frozen=True)
class OutputGaussian:
    """Gaussian over the logits at one input: mean (C,) and either a full
    C x C covariance or a per-class variance vector."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def is_diagonal(self) -> bool:
        return self.cov.ndim == 1

    def variances(self) -> np.ndarray:
        var = self.cov if self.is_diagonal else np.diag(self.cov).copy()
        low = var.min()
        if low < -_VAR_ROUNDOFF:
            raise NegativeVariance(f"output variance {low:.3e} below zero")
        return np.maximum(var, 0.0)


def _build_factors(hess: HessianStructure, lam: float, n_train: int):
    if hess.kind == "full":
        return linalg.cholesky(
            hess.matrix + lam * np.eye(hess.matrix.shape[0]), jitter=0.0
        )
    if hess.kind == "kfac":
        sqn, sql = math.sqrt(n_train), math.sqrt(lam)
        u = linalg.inverse_spd(
            linalg.cholesky(sqn * hess.a + sql * np.eye(hess.a.shape[0]))
        )
        v = linalg.inverse_spd(
            linalg.cholesky(sqn * hess.b + sql * np.eye(hess.b.shape[0]))
        )
        return 0.5 * (u + u.T), 0.5 * (v + v.T)
    return 1.0 / (hess.entries + lam)


def _logdet_precision(hess: HessianStructure, lam: float, n_train: int, factors) -> float:
    if hess.kind == "full":
        return linalg.logdet_spd(factors)
    if hess.kind == "kfac":
        c, p = hess.a.shape[0], hess.b.shape[0]
        sqn, sql = math.sqrt(n_train), math.sqrt(lam)
        ld_a = linalg.logdet_spd(linalg.cholesky(sqn * hess.a + sql * np.eye(c)))
        ld_b = linalg.logdet_spd(linalg.cholesky(sqn * hess.b + sql * np.eye(p)))
        return p * ld_a + c * ld_b
    return float(np.sum(np.log(hess.entries + lam)))


def _log_marglik(net: Mlp, data: Dataset, hess, lam, n_train, factors) -> float:
    """Closed-form evidence of the head under the Gaussian posterior:

        log p(D | w_map) - (lam/2) ||vec(w_map)||^2
        + (CP/2) log lam - (1/2) logdet(posterior precision)

    The (CP/2) log 2pi terms of the prior normalizer and the Gaussian
    integral cancel and are omitted; only differences of these values are
    ever consumed (mixture weighting), so the constant convention is free.
    """
    logp = log_softmax(forward(net, data.X))
    loglik = float(logp[np.arange(data.n), data.y].sum())
    cp = net.num_classes * net.feature_dim
    quad = float(np.sum(net.head**2))
    return (
        loglik
        - 0.5 * lam * quad
        + 0.5 * cp * math.log(lam)
        - 0.5 * _logdet_precision(hess, lam, n_train, factors)
    )


def fit_from_hessian(
    net: Mlp,
    data: Dataset,
    hess: HessianStructure,
    prior_precision: float,
    n_train: int | None = None,
) -> LaplaceComponent:
    """Assemble a component from a precomputed curvature (used by ``fit`` and
    by prior-precision refits that reuse the curvature)."""
    if prior_precision <= 0:
        raise InvalidPrior(f"prior precision must be > 0, got {prior_precision}")
    n_train = data.n if n_train is None else int(n_train)
    factors = _build_factors(hess, prior_precision, n_train)
    lm = _log_marglik(net, data, hess, prior_precision, n_train, factors)
    return LaplaceComponent(
        net=net,
        w_map=net.head.copy(),
        hess=hess,
        prior_precision=float(prior_precision),
        n_train=n_train,
        factors=factors,
        log_marglik=lm,
    )


def fit(
    net: Mlp,
    data: Dataset,
    structure: str = "kfac",
    prior_precision: float = 1.0,
    kfac_beta: float = 0.99,
    kfac_batch_size: int | None = None,
    kfac_seed: int = 0,
) -> LaplaceComponent:
    """Compute the curvature of ``structure`` on ``data`` and build the
    posterior at the given prior precision."""
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}")
    if prior_precision <= 0:
        raise InvalidPrior(f"prior precision must be > 0, got {prior_precision}")
    if structure == "full":
        hess: HessianStructure = FullHessian(ggn_full(net, data))
    elif structure == "kfac":
        a, b = ggn_kfac(net, data, beta=kfac_beta, batch_size=kfac_batch_size, seed=kfac_seed)
        hess = KfacFactors(a, b)
    else:
        hess = DiagHessian(ggn_diag(net, data))
    return fit_from_hessian(net, data, hess, prior_precision)


def refit(comp: LaplaceComponent, data: Dataset, prior_precision: float) -> LaplaceComponent:
    """Rebuild posterior factors and evidence at a new prior precision,
    reusing the stored curvature (never recomputed)."""
    return fit_from_hessian(comp.net, data, comp.hess, prior_precision, comp.n_train)


# --------------------------------------------------------------------------
# Posterior application
# --------------------------------------------------------------------------


def output_gaussian(comp: LaplaceComponent, x) -> OutputGaussian:
    """Gaussian over logits at x: mean w_map phi, covariance per structure.

    full:  (I (x) phi^T) Sigma (I (x) phi), dense C x C;
    kfac:  <phi, V phi> U, dense C x C;
    diag:  per-class sum_j Sigma[(i,j)] phi_j^2, variance vector.
    """
    phi = features(comp.net, x)
    if phi.ndim != 1:
        raise DimensionMismatch("output_gaussian takes a single input vector")
    mean = comp.w_map @ phi
    c, p = comp.num_classes, comp.feature_dim

    if comp.structure == "full":
        factor: SpdFactor = comp.factors
        jac = np.kron(np.eye(c), phi[None, :])  # (C, CP) under row-major vec
        cov = jac @ linalg.solve_spd(factor, jac.T)
        cov = 0.5 * (cov + cov.T)
    elif comp.structure == "kfac":
        u, v = comp.factors
        cov = float(phi @ v @ phi) * u
    else:
        inv = comp.factors.reshape(c, p)
        cov = inv @ (phi**2)
    return OutputGaussian(mean=mean, cov=cov)


def posterior_covariance_dense(comp: LaplaceComponent) -> np.ndarray:
    """Materialize the CP x CP posterior covariance (cross-checks and the
    row-wise confidence bounds; desk-scale sizes only)."""
    if comp.structure == "full":
        return linalg.inverse_spd(comp.factors)
    if comp.structure == "kfac":
        u, v = comp.factors
        return np.kron(u, v)
    return np.diag(comp.factors)


def probit_scaled_logits(g: OutputGaussian) -> np.ndarray:
    """Means damped by their own variances: z_i = m_i / sqrt(1 + (pi/8) var_i)."""
    var = g.variances()
    return g.mean / np.sqrt(1.0 + (math.pi / 8.0) * var)


def probit_predict(g: OutputGaussian) -> np.ndarray:
    """Closed-form approximation of the softmax-Gaussian integral: softmax of
    the variance-damped logits.  Uses only diagonal covariance entries."""
    return softmax(probit_scaled_logits(g))


def mc_predict(g: OutputGaussian, n_samples: int = 100, seed: int = 0) -> np.ndarray:
    """Monte Carlo estimate of the softmax-Gaussian integral.

    Diagonal covariances sample per class independently; full covariances go
    through a Cholesky factor (with jitter escalation).  An exactly-zero
    covariance short-circuits to softmax(mean).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    if g.is_diagonal:
        std = np.sqrt(g.variances())
        if not std.any():
            return softmax(g.mean)
        draws = g.mean + rng.standard_normal((n_samples, g.mean.size)) * std
    else:
        if not g.cov.any():
            return softmax(g.mean)
        factor = linalg.cholesky(g.cov, jitter=1e-12)
        z = rng.standard_normal((n_samples, g.mean.size))
        draws = g.mean + z @ factor.lower.T
    return softmax(draws).mean(axis=0)


def log_marginal_likelihood(comp: LaplaceComponent) -> float:
    """Evidence of the fitted component (precomputed at fit time)."""
    return comp.log_marglik
