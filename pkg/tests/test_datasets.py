import numpy as np
import pytest

from mola_kit.datasets import (
    InvalidConfig,
    ShiftSpec,
    apply_shift,
    make_blobs,
    make_ood,
    train_val_split,
)


# ---------------------------------------------------------------- blobs


def test_blobs_deterministic():
    a = make_blobs(3, 90, seed=4)
    b = make_blobs(3, 90, seed=4)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    c = make_blobs(3, 90, seed=5)
    assert not np.array_equal(a.X, c.X)


def test_blobs_balanced_classes():
    for n in (90, 91, 92):
        data = make_blobs(3, n, seed=0)
        counts = np.bincount(data.y, minlength=3)
        assert counts.sum() == n
        assert counts.max() - counts.min() <= 1


def test_blobs_tight_spread_separable():
    data = make_blobs(4, 200, spread=1e-3, seed=1)
    # nearest-center classification is perfect in the separable limit
    angles = 2 * np.pi * np.arange(4) / 4
    centers = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pred = np.argmin(
        ((data.X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1
    )
    assert (pred == data.y).mean() == 1.0


def test_blobs_validation():
    with pytest.raises(InvalidConfig):
        make_blobs(1, 10)
    with pytest.raises(InvalidConfig):
        make_blobs(3, 10, dim=1)
    with pytest.raises(InvalidConfig):
        make_blobs(3, 2)


def test_blobs_higher_dim_centers():
    data = make_blobs(3, 300, dim=5, spread=0.1, seed=2)
    # trailing dims carry no center structure
    assert np.abs(data.X[:, 2:].mean(axis=0)).max() < 0.1


# ---------------------------------------------------------------- shifts


def test_shift_severity_zero_identity():
    data = make_blobs(3, 60, seed=3)
    for kind in ("rotate", "gaussian_noise", "scale"):
        out = apply_shift(data, ShiftSpec(kind, 0), seed=9)
        assert np.array_equal(out.X, data.X) and np.array_equal(out.y, data.y)


def test_rotation_composition_returns_original():
    data = make_blobs(3, 60, seed=4)
    spec = ShiftSpec("rotate", 3, param=180.0)
    twice = apply_shift(apply_shift(data, spec), spec)
    np.testing.assert_allclose(twice.X, data.X, atol=1e-12)


def test_rotation_severity_mapping():
    data = make_blobs(2, 40, seed=5)
    out = apply_shift(data, ShiftSpec("rotate", 2))
    theta = np.deg2rad(60.0)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    np.testing.assert_allclose(out.X, data.X @ rot.T, atol=1e-12)


def test_noise_deterministic_per_seed():
    data = make_blobs(2, 40, seed=6)
    a = apply_shift(data, ShiftSpec("gaussian_noise", 3), seed=1)
    b = apply_shift(data, ShiftSpec("gaussian_noise", 3), seed=1)
    c = apply_shift(data, ShiftSpec("gaussian_noise", 3), seed=2)
    assert np.array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_scale_mapping():
    data = make_blobs(2, 30, seed=7)
    out = apply_shift(data, ShiftSpec("scale", 4))
    np.testing.assert_allclose(out.X, 3.0 * data.X, atol=1e-12)


def test_shift_validation():
    with pytest.raises(InvalidConfig):
        ShiftSpec("blur", 1)
    with pytest.raises(InvalidConfig):
        ShiftSpec("rotate", 6)
    with pytest.raises(InvalidConfig):
        ShiftSpec("rotate", 1, param=270.0)


def test_labels_never_change():
    data = make_blobs(3, 50, seed=8)
    for kind, sev in (("rotate", 5), ("gaussian_noise", 2), ("scale", 1)):
        out = apply_shift(data, ShiftSpec(kind, sev), seed=0)
        assert np.array_equal(out.y, data.y)


# ---------------------------------------------------------------- OOD


def test_far_box_norms():
    inlier = make_blobs(3, 100, seed=9)
    ood = make_ood(inlier, "far_box", n=50, seed=0)
    r_in = np.linalg.norm(inlier.X, axis=1).max()
    norms = np.linalg.norm(ood.X, axis=1)
    assert norms.min() >= 10.0 * r_in - 1e-9
    assert norms.max() <= 20.0 * r_in + 1e-9
    assert ood.n == 50


def test_ood_deterministic():
    inlier = make_blobs(3, 100, seed=10)
    a = make_ood(inlier, "extra_blob", n=30, seed=3)
    b = make_ood(inlier, "extra_blob", n=30, seed=3)
    assert np.array_equal(a.X, b.X)


def test_extra_blob_sits_between_clusters():
    inlier = make_blobs(3, 300, spread=0.2, seed=11)
    ood = make_ood(inlier, "extra_blob", n=100, seed=0)
    # between the clusters means well inside the polygon radius
    assert np.linalg.norm(ood.X, axis=1).mean() < 4.0


def test_ood_default_count_and_kind_check():
    inlier = make_blobs(2, 64, seed=12)
    assert make_ood(inlier, "far_box").n == 64
    with pytest.raises(InvalidConfig):
        make_ood(inlier, "nearby")


# ---------------------------------------------------------------- split


def test_train_val_split_sizes_and_cap():
    data = make_blobs(3, 100, seed=13)
    rest, val = train_val_split(data, 0.2, seed=0)
    assert val.n == 20 and rest.n == 80
    rest, val = train_val_split(data, 0.5, seed=0, val_cap=10)
    assert val.n == 10 and rest.n == 90


def test_train_val_split_disjoint_cover():
    data = make_blobs(3, 60, seed=14)
    rest, val = train_val_split(data, 0.25, seed=1)
    joined = np.concatenate([rest.X, val.X])
    assert joined.shape[0] == data.n
    assert {tuple(r) for r in joined} == {tuple(r) for r in data.X}
