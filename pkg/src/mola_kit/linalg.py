"""Dense symmetric linear algebra kernel.

Everything downstream (curvature factors, posterior covariances, evidence
terms, eigenvalue floors) runs through the handful of routines here.  Storage
is plain row-major float64 ndarrays; matrices stay small (at most a few
hundred rows), so there are no sparse or blocked paths.  Factorizations are
delegated to LAPACK via numpy/scipy behind the contracts below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

# Relative tolerance for accepting a matrix as symmetric; inputs within it
# are symmetrized before factorization to absorb accumulated round-off.
SYMMETRY_RTOL = 1e-8

# Jitter escalation: multiply by 10 per retry, at most this many retries,
# never exceeding 1e-4 * trace/dim.  Fixed so failures are deterministic.
_MAX_JITTER_STEPS = 8
_JITTER_CAP_SCALE = 1e-4


class LinalgError(Exception):
    """Base class for numerical failures in this module."""


class NotSymmetric(LinalgError):
    pass


class NotPositiveDefinite(LinalgError):
    pass


class DimensionMismatch(LinalgError):
    pass


def _as_square(m, name="matrix"):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError(f"{name} contains non-finite entries")
    return m


def check_symmetric(m, rtol=SYMMETRY_RTOL):
    """Return the symmetrized copy (m + m.T)/2, or raise NotSymmetric."""
    m = _as_square(m)
    scale = max(float(np.abs(m).max()), 1.0)
    if float(np.abs(m - m.T).max()) > rtol * scale:
        raise NotSymmetric(
            f"asymmetry {float(np.abs(m - m.T).max()):.3e} exceeds "
            f"{rtol:.1e} * {scale:.3e}"
        )
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    ``lower @ lower.T`` reconstructs the factored matrix (source plus any
    jitter that was required).  ``jitter`` records the amount actually added.
    """

    lower: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        if lo.ndim != 2 or lo.shape[0] != lo.shape[1]:
            raise DimensionMismatch(f"factor must be square, got {lo.shape}")
        if np.any(np.diag(lo) <= 0.0):
            raise NotPositiveDefinite("factor diagonal must be strictly positive")
        object.__setattr__(self, "lower", lo)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def cholesky(m, jitter: float = 0.0) -> SpdFactor:
    """Factor a symmetric matrix as L L^T, escalating jitter on failure.

    The first attempt factors ``m + jitter*I`` exactly as given.  On failure
    the jitter is multiplied by 10 (seeded at a trace-scaled epsilon when the
    caller passed 0), for at most 8 retries, capped at 1e-4 * trace(m)/dim.

    Raises NotSymmetric for asymmetric input and NotPositiveDefinite once
    escalation is exhausted.
    """
    m = check_symmetric(m)
    dim = m.shape[0]
    trace = float(np.trace(m))
    cap = _JITTER_CAP_SCALE * trace / dim if trace > 0 else 0.0

    current = float(jitter)
    for step in range(_MAX_JITTER_STEPS + 1):
        try:
            lower = np.linalg.cholesky(
                m if current == 0.0 else m + current * np.eye(dim)
            )
            return SpdFactor(lower=lower, jitter=current)
        except np.linalg.LinAlgError:
            if step == _MAX_JITTER_STEPS:
                break
            nxt = current * 10.0 if current > 0.0 else max(1e-14 * trace / dim, 1e-300)
            if nxt > cap:
                break
            current = nxt
    raise NotPositiveDefinite(
        f"not positive definite after jitter escalation (last jitter {current:.3e})"
    )


def solve_spd(factor: SpdFactor, b) -> np.ndarray:
    """Solve (L L^T) x = b given the Cholesky factor."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.dim:
        raise DimensionMismatch(
            f"rhs length {b.shape[0]} does not match factor dim {factor.dim}"
        )
    y = solve_triangular(factor.lower, b, lower=True, check_finite=False)
    return solve_triangular(factor.lower.T, y, lower=False, check_finite=False)


def inverse_spd(factor: SpdFactor) -> np.ndarray:
    """Explicit inverse of the factored matrix (small dims only)."""
    return solve_spd(factor, np.eye(factor.dim))


def logdet_spd(factor: SpdFactor) -> float:
    """log det of the factored matrix: 2 * sum(log diag(L))."""
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))


def min_eigenvalue_sym(m) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Solver: LAPACK ``syevd`` (tridiagonal reduction + divide and conquer)
    via numpy.linalg.eigvalsh.
    """
    m = check_symmetric(m)
    return float(np.linalg.eigvalsh(m)[0])


def quad_form(v, m) -> float:
    """v^T m v."""
    v = np.asarray(v, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if v.ndim != 1 or m.ndim != 2 or m.shape != (v.size, v.size):
        raise DimensionMismatch(
            f"quad_form shapes incompatible: v {v.shape}, m {m.shape}"
        )
    return float(v @ m @ v)
