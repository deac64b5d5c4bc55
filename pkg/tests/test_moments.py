import numpy as np
import pytest

from dynafactor import ValidationError
from dynafactor.moments import (
    MAX_EIGEN_DIM,
    build_m,
    build_s,
    lag_autocovariance,
    pooled_from_autocovariances,
    projected_from_covariance,
    sym_eigen,
)
from dynafactor.simulate import DgpSpec, generate

from oracles import autocov_loop, orth_complement, population_covs_diag


def test_autocovariance_matches_loop(rng):
    y = rng.standard_normal((40, 3)) + 2.0
    for k in (0, 1, 3):
        np.testing.assert_allclose(lag_autocovariance(y, k).matrix, autocov_loop(y, k), atol=1e-12)


def test_lag_zero_symmetric(rng):
    c = lag_autocovariance(rng.standard_normal((30, 4)), 0).matrix
    np.testing.assert_array_equal(c, c.T)


def test_iid_covariance_near_identity():
    n = 4000
    for seed in range(20):
        y = np.random.default_rng(seed).standard_normal((n, 4))
        c = lag_autocovariance(y, 0).matrix
        assert np.max(np.abs(c - np.eye(4))) < 4 / np.sqrt(n)


def test_constant_path_gives_zero_matrices():
    y = np.tile([1.0, -2.0, 3.0], (20, 1))
    for k in range(3):
        assert not lag_autocovariance(y, k).matrix.any()


def test_lag_too_large():
    with pytest.raises(ValidationError):
        lag_autocovariance(np.zeros((5, 2)), 4)


def test_build_m_single_lag(rng):
    y = rng.standard_normal((60, 3))
    c1 = autocov_loop(y, 1)
    np.testing.assert_allclose(build_m(y, 1).matrix, c1 @ c1.T, atol=1e-12)


def test_m_is_psd_and_trace_identity(rng):
    for _ in range(10):
        y = rng.standard_normal((80, 6)).cumsum(axis=0)
        pm = build_m(y, 3)
        assert pm.eigenvalues[-1] >= -1e-10 * pm.eigenvalues[0]
        tr = sum(np.sum(lag_autocovariance(y, k).matrix ** 2) for k in (1, 2, 3))
        assert abs(np.trace(pm.matrix) - tr) <= 1e-10 * tr
        np.testing.assert_allclose(pm.eigenvectors.T @ pm.eigenvectors, np.eye(6), atol=1e-10)


def test_build_m_k0_bound():
    with pytest.raises(ValidationError):
        build_m(np.random.default_rng(0).standard_normal((4, 2)), 3)


def test_sym_eigen_diagonal():
    w, v = sym_eigen(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(w, [3, 2, 1])
    np.testing.assert_allclose(v, np.eye(3)[:, [0, 2, 1]], atol=1e-15)


def test_sym_eigen_identity_is_orthonormal():
    w, v = sym_eigen(np.eye(4))
    np.testing.assert_allclose(w, 1.0)
    np.testing.assert_allclose(v.T @ v, np.eye(4), atol=1e-14)


def test_sym_eigen_rank_one_sign_rule():
    v0 = np.array([1.0, -1.0, 1.0, -1.0])  # norm 2
    w, v = sym_eigen(np.outer(v0, v0))
    np.testing.assert_allclose(w, [4, 0, 0, 0], atol=1e-12)
    # tie in magnitude: lowest index is the largest entry and must be positive
    np.testing.assert_allclose(v[:, 0], v0 / 2, atol=1e-12)


def test_sym_eigen_reconstruction_and_errors(rng):
    a = rng.standard_normal((7, 7))
    a = a + a.T
    w, v = sym_eigen(a)
    assert np.linalg.norm(v @ np.diag(w) @ v.T - a) <= 1e-9 * np.linalg.norm(a)
    assert np.all(np.diff(w) <= 0)
    with pytest.raises(ValidationError):
        sym_eigen(np.array([[1.0, np.nan], [np.nan, 1.0]]))
    with pytest.raises(ValidationError):
        sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eigen_refuses_huge():
    with pytest.raises(ValidationError):
        sym_eigen(np.zeros((MAX_EIGEN_DIM + 1, MAX_EIGEN_DIM + 1)))


def test_build_s_full_and_empty_projection(rng):
    y = rng.standard_normal((50, 4))
    sig = lag_autocovariance(y, 0).matrix
    np.testing.assert_allclose(build_s(y, np.eye(4)).matrix, sig @ sig, atol=1e-12)
    assert not build_s(y, np.zeros((4, 0))).matrix.any()


def test_build_s_rejects_non_orthonormal(rng):
    with pytest.raises(ValidationError):
        build_s(rng.standard_normal((20, 3)), np.ones((3, 1)))


def test_s_is_psd(rng):
    y = rng.standard_normal((60, 5))
    b1 = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    s = build_s(y, b1).matrix
    x = rng.standard_normal((100, 5))
    assert np.all(np.einsum("ij,jk,ik->i", x, s, x) >= -1e-12)


def _oracle_model(example, **kw):
    _, truth = generate(DgpSpec(example, **kw))
    covs = population_covs_diag(truth.l1, truth.l2, truth.phi, 2)
    return truth, covs


@pytest.mark.parametrize(
    "example,kw",
    [("Ex1", dict(p=5, r=3)), ("Ex2", dict(p=30, r=4, k_spike=3))],
)
def test_population_null_spaces(example, kw):
    truth, covs = _oracle_model(example, **kw)
    b1 = orth_complement(truth.l1)
    m = pooled_from_autocovariances(covs[1:]).matrix
    assert np.linalg.norm(m @ b1) <= 1e-10
    s = projected_from_covariance(covs[0], b1).matrix
    b2 = orth_complement(covs[0] @ b1)
    assert b2.shape[1] == kw["r"]
    assert np.linalg.norm(s @ b2) <= 1e-10


def test_white_noise_population_m_is_zero():
    covs = [np.eye(3), np.zeros((3, 3)), np.zeros((3, 3))]
    assert not pooled_from_autocovariances(covs[1:]).matrix.any()
