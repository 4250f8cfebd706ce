import numpy as np
import pytest
import scipy.sparse as sp

from fve2l.solver import (IndefiniteError, SolverError, condition_number, lambda_min_sym, negative_inertia,
                          sigma_max, sigma_max_power, solve)


def random_sparse(n, seed, shift=0.0):
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=5 / n, random_state=rng) + sp.diags(np.full(n, 4.0 + shift))
    return a.tocsr()


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


@pytest.mark.parametrize("method", ("auto", "lu", "gmres"))
def test_solve_methods(method):
    a = random_sparse(300, 1)
    x0 = np.random.default_rng(2).standard_normal(300)
    rep = solve(a, a @ x0, tol=1e-11, method=method)
    assert rep.residual <= 1e-10
    np.testing.assert_allclose(rep.x, x0, rtol=1e-8)
    assert rep.to_dict()["n"] == 300


def test_solve_shape_and_singular():
    with pytest.raises(SolverError):
        solve(sp.eye(3), np.ones(4))
    sing = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        solve(sing, np.array([1.0, 0.0]))


@pytest.mark.parametrize("n", (50, 150))
def test_sigma_max_agrees_with_svd_and_power(n):
    a = random_sparse(n, n)
    ref = np.linalg.svd(a.toarray(), compute_uv=False)[0]
    assert sigma_max(a) == pytest.approx(ref, rel=1e-8)
    assert sigma_max(a, dense_max=0) == pytest.approx(ref, rel=1e-8)
    assert sigma_max_power(a) == pytest.approx(ref, rel=1e-6)


def test_lambda_min_sparse_matches_dense():
    n = 2500
    a = laplacian_1d(n) + sp.diags(np.linspace(0, 1e-3, n)) + 0.1 * sp.diags(np.ones(n - 1), 1)
    dense = np.linalg.eigvalsh(0.5 * (a + a.T).toarray())[0]
    assert lambda_min_sym(a) == pytest.approx(dense, rel=1e-6)


def test_lambda_min_detects_indefinite_sparse():
    n = 2500
    a = laplacian_1d(n) - sp.diags(np.r_[np.zeros(n - 1), 5.0])
    assert lambda_min_sym(a) < 0
    assert negative_inertia(0.5 * (a + a.T)) == 1
    assert negative_inertia(laplacian_1d(100)) == 0


def test_condition_number():
    a = laplacian_1d(100)
    ev = np.linalg.eigvalsh(a.toarray())
    assert condition_number(a) == pytest.approx(ev[-1] / ev[0], rel=1e-8)
    with pytest.raises(IndefiniteError):
        condition_number(-a)
