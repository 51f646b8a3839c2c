"""Synthetic classification data: Gaussian blobs, shifted variants, outliers.

Blob centers sit on the vertices of a fixed-radius polygon, so rotating the
feature plane plays the role of an increasing distribution shift, additive
noise mimics corruption, and rescaling moves mass off the training manifold.
Severity s in 0..5 maps to 30*s degrees, sigma 0.1*s, or factor 1 + 0.5*s;
severity 0 is always the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Dataset

SHIFT_KINDS = ("rotate", "gaussian_noise", "scale")

ANGLE_PER_SEVERITY = 30.0
SIGMA_PER_SEVERITY = 0.1
SCALE_PER_SEVERITY = 0.5


class InvalidConfig(Exception):
    pass


class UnsupportedDim(Exception):
    pass


@dataclass(frozen=True)
class ShiftSpec:
    """A named transform at an integer severity; ``param`` overrides the
    severity-derived magnitude (angle in degrees / noise sigma / factor)."""

    kind: str
    severity: int
    param: float | None = None

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise InvalidConfig(f"unknown shift kind {self.kind!r}")
        if not 0 <= self.severity <= 5:
            raise InvalidConfig("severity must be in 0..5")
        if self.kind == "rotate" and self.param is not None:
            if not 0.0 <= self.param <= 180.0:
                raise InvalidConfig("rotation angle must be in [0, 180] degrees")

    @property
    def magnitude(self) -> float:
        if self.param is not None:
            return float(self.param)
        if self.kind == "rotate":
            return ANGLE_PER_SEVERITY * self.severity
        if self.kind == "gaussian_noise":
            return SIGMA_PER_SEVERITY * self.severity
        return 1.0 + SCALE_PER_SEVERITY * self.severity


def make_blobs(
    num_classes: int,
    n: int,
    dim: int = 2,
    spread: float = 0.6,
    seed: int = 0,
    radius: float = 4.0,
) -> Dataset:
    """Balanced Gaussian clusters at the vertices of a radius-R polygon in the
    first two coordinates (extra dims centered at zero).  Class counts differ
    by at most one; everything is deterministic per seed."""
    if num_classes < 2:
        raise InvalidConfig("need at least two classes")
    if dim < 2:
        raise InvalidConfig("need dim >= 2")
    if n < num_classes:
        raise InvalidConfig("need at least one point per class")
    if spread < 0:
        raise InvalidConfig("spread must be >= 0")
    rng = np.random.default_rng(seed)

    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = np.zeros((num_classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)

    base, extra = divmod(n, num_classes)
    counts = [base + (1 if c < extra else 0) for c in range(num_classes)]
    xs, ys = [], []
    for c, count in enumerate(counts):
        xs.append(centers[c] + spread * rng.standard_normal((count, dim)))
        ys.append(np.full(count, c, dtype=np.int64))
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    return Dataset(X[order], y[order], num_classes)


def _rotation(dim: int, degrees: float) -> np.ndarray:
    theta = np.deg2rad(degrees)
    r = np.eye(dim)
    r[0, 0] = r[1, 1] = np.cos(theta)
    r[0, 1] = -np.sin(theta)
    r[1, 0] = np.sin(theta)
    return r


def apply_shift(data: Dataset, spec: ShiftSpec, seed: int = 0) -> Dataset:
    """Transformed copy of the dataset; labels unchanged."""
    if spec.severity == 0:
        return Dataset(data.X.copy(), data.y.copy(), data.num_classes)
    if spec.kind == "rotate":
        if data.dim < 2:
            raise UnsupportedDim("rotation needs at least two feature dims")
        X = data.X @ _rotation(data.dim, spec.magnitude).T
    elif spec.kind == "gaussian_noise":
        rng = np.random.default_rng(seed)
        X = data.X + spec.magnitude * rng.standard_normal(data.X.shape)
    else:
        X = data.X * spec.magnitude
    return Dataset(X, data.y.copy(), data.num_classes)


OOD_KINDS = ("far_box", "extra_blob")


def make_ood(inlier: Dataset, kind: str, n: int | None = None, seed: int = 0) -> Dataset:
    """Outlier sets relative to an in-distribution sample.

    far_box: uniform over an annulus at 10x to 20x the largest inlier norm;
    extra_blob: a tight cluster at the centroid between the training blobs.
    Labels are dummy zeros (never consumed).
    """
    if kind not in OOD_KINDS:
        raise InvalidConfig(f"unknown OOD kind {kind!r}")
    n = inlier.n if n is None else int(n)
    rng = np.random.default_rng(seed)
    dim = inlier.dim
    if kind == "far_box":
        r_in = float(np.linalg.norm(inlier.X, axis=1).max())
        direction = rng.standard_normal((n, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radii = rng.uniform(10.0 * r_in, 20.0 * r_in, size=n)
        X = direction * radii[:, None]
    else:
        center = inlier.X.mean(axis=0)
        scale = 0.25 * float(np.linalg.norm(inlier.X - center, axis=1).mean())
        X = center + scale * rng.standard_normal((n, dim))
    return Dataset(X, np.zeros(n, dtype=np.int64), inlier.num_classes)


def train_val_split(data: Dataset, val_fraction: float, seed: int, val_cap: int | None = None):
    """Deterministic split into (rest, validation)."""
    if not 0.0 < val_fraction < 1.0:
        raise InvalidConfig("val_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n)
    n_val = max(1, int(round(val_fraction * data.n)))
    if val_cap is not None:
        n_val = min(n_val, int(val_cap))
    val_idx, rest_idx = order[:n_val], order[n_val:]
    return data.subset(np.sort(rest_idx)), data.subset(np.sort(val_idx))
