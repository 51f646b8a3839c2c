import numpy as np
import pytest

from mola_kit import linalg
from mola_kit.linalg import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    cholesky,
    logdet_spd,
    min_eigenvalue_sym,
    quad_form,
    solve_spd,
)


def random_spd(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a @ a.T + dim * np.eye(dim)


# ---------------------------------------------------------------- oracles


def gauss_jordan_solve(m, b):
    """Row-reduction solve, independent of any factorization code."""
    m = np.array(m, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = m.shape[0]
    aug = np.concatenate([m, b[:, None]], axis=1)
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(aug[col:, col])))
        aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, -1]


def lu_logdet(m):
    """Doolittle LU with partial pivoting; returns log|det| for SPD input."""
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    sign = 1.0
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        if pivot != col:
            a[[col, pivot]] = a[[pivot, col]]
            sign = -sign
        for row in range(col + 1, n):
            factor = a[row, col] / a[col, col]
            a[row, col:] -= factor * a[col, col:]
    assert sign * np.prod(np.sign(np.diag(a))) > 0
    return float(np.sum(np.log(np.abs(np.diag(a)))))


# ---------------------------------------------------------------- cholesky


def test_cholesky_identity_is_identity():
    f = cholesky(np.eye(3), jitter=0.0)
    assert np.array_equal(f.lower, np.eye(3))
    assert f.jitter == 0.0


def test_cholesky_hand_case():
    f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
    np.testing.assert_allclose(f.lower, expected, rtol=1e-12)
    np.testing.assert_allclose(f.reconstruct(), [[4, 2], [2, 3]], rtol=1e-12)


def test_cholesky_indefinite_raises():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), jitter=1e-12)


def test_cholesky_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_rejects_nonsquare():
    with pytest.raises(DimensionMismatch):
        cholesky(np.ones((2, 3)))


def test_cholesky_reconstruction_error_small():
    rng = np.random.default_rng(7)
    for dim in (2, 5, 17, 40):
        m = random_spd(rng, dim)
        f = cholesky(m)
        assert f.jitter == 0.0
        rel = np.linalg.norm(f.reconstruct() - m) / np.linalg.norm(m)
        assert rel <= 1e-10


def test_cholesky_jitter_rescues_singular_psd():
    # rank-1 PSD matrix with a healthy trace: needs escalation, then succeeds
    v = np.array([1.0, 2.0, 3.0])
    m = np.outer(v, v)
    f = cholesky(m, jitter=1e-10)
    assert f.jitter > 0.0


# ---------------------------------------------------------------- solve


def test_solve_identity():
    f = cholesky(np.eye(2))
    np.testing.assert_array_equal(solve_spd(f, np.array([1.0, 2.0])), [1.0, 2.0])


def test_solve_scaled_identity():
    f = cholesky(2.0 * np.eye(2))
    np.testing.assert_allclose(solve_spd(f, np.array([4.0, 6.0])), [2.0, 3.0], rtol=1e-14)


def test_solve_matches_gauss_jordan_oracle():
    rng = np.random.default_rng(11)
    m = random_spd(rng, 5)
    b = rng.standard_normal(5)
    x = solve_spd(cholesky(m), b)
    np.testing.assert_allclose(x, gauss_jordan_solve(m, b), rtol=1e-8)


def test_solve_residual_bound():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = random_spd(rng, 8)
        b = rng.standard_normal(8)
        f = cholesky(m)
        x = solve_spd(f, b)
        assert np.linalg.norm(m @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_solve_roundtrip():
    rng = np.random.default_rng(5)
    m = random_spd(rng, 12)
    f = cholesky(m)
    v = rng.standard_normal(12)
    back = solve_spd(f, m @ v)
    assert np.linalg.norm(back - v) <= 1e-8 * np.linalg.norm(v)


def test_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_spd(cholesky(np.eye(3)), np.ones(4))


# ---------------------------------------------------------------- logdet


def test_logdet_identity_zero():
    assert logdet_spd(cholesky(np.eye(4))) == 0.0


def test_logdet_scaled_identity():
    assert logdet_spd(cholesky(2.0 * np.eye(3))) == pytest.approx(3 * np.log(2), abs=1e-12)


def test_logdet_matches_lu_oracle():
    rng = np.random.default_rng(13)
    for dim in (3, 7, 20):
        m = random_spd(rng, dim)
        assert logdet_spd(cholesky(m)) == pytest.approx(lu_logdet(m), rel=1e-8)


def test_logdet_matches_eigenvalue_sum():
    rng = np.random.default_rng(17)
    for dim in (5, 25, 50):
        m = random_spd(rng, dim)
        eig_sum = float(np.sum(np.log(np.linalg.eigvalsh(m))))
        assert logdet_spd(cholesky(m)) == pytest.approx(eig_sum, rel=1e-6)


# ---------------------------------------------------------------- eigenvalues


def test_min_eig_diagonal():
    assert min_eigenvalue_sym(np.diag([3.0, 1.0, 2.0])) == pytest.approx(1.0, abs=1e-12)


def test_min_eig_hand_case():
    # characteristic polynomial of [[2,1],[1,2]]: (2-x)^2 - 1, roots 1 and 3
    assert min_eigenvalue_sym(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(1.0, rel=1e-12)


def test_min_eig_identity():
    assert min_eigenvalue_sym(np.eye(6)) == pytest.approx(1.0, abs=1e-12)


def test_min_eig_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        min_eigenvalue_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_min_eig_orthogonal_similarity_invariance():
    rng = np.random.default_rng(19)
    for _ in range(5):
        m = random_spd(rng, 9)
        q, _ = np.linalg.qr(rng.standard_normal((9, 9)))
        rotated = q @ m @ q.T
        assert min_eigenvalue_sym(rotated) == pytest.approx(
            min_eigenvalue_sym(m), rel=1e-8
        )


# ---------------------------------------------------------------- quad form


def test_quad_form_identity():
    assert quad_form(np.array([1.0, 0.0]), np.eye(2)) == 1.0


def test_quad_form_hand_case():
    # (1,1) [[1,2],[2,1]] (1,1)^T = 1 + 2 + 2 + 1
    assert quad_form(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [2.0, 1.0]])) == 6.0


def test_quad_form_zero_vector():
    assert quad_form(np.zeros(4), np.arange(16.0).reshape(4, 4)) == 0.0


def test_quad_form_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        quad_form(np.ones(3), np.eye(2))
