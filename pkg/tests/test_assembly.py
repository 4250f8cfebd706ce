import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from conftest import perturbed_mesh
from fve2l import refelem
from fve2l.assembly import (AssemblyError, ElasticityProblem, EllipticProblem, apply_dirichlet, assemble,
                            element_matrix, interpolate, lame_tensor, write_matrix_market)
from fve2l.conservation import conservation_report
from fve2l.mesh import build_structured
from fve2l.solver import solve
from polyhelp import from_terms, lame_forcing, scalar_forcing

ORDERS = refelem.SUPPORTED_ORDERS
D_ANISO = [[2.0, 0.5], [0.5, 1.0]]


def scalar_poly_problem(k, D=D_ANISO):
    u = from_terms({(k, 0): 1.0, (1, k - 1): -0.7, (0, k): 0.4, (0, 1): 2.0, (0, 0): 1.0}, k)
    f = scalar_forcing(u, D)
    grad = lambda x, y: np.stack([u.d(0)(x, y), u.d(1)(x, y)])  # noqa: E731
    return EllipticProblem(forcing=f, dirichlet=u, diffusion=np.array(D), exact=u, exact_grad=grad), u


def elastic_poly_problem(k, lam=1.0, mu=2.0):
    u = [from_terms({(k, 0): 1.0, (0, 2): 1.0, (1, 0): -1.0}, k),
         from_terms({(1, k - 1): 1.0, (0, k): -0.5, (0, 0): 0.3}, k)]
    f = lame_forcing(u, lam, mu)
    return ElasticityProblem(lam, mu, forcing=lambda x, y: np.stack([f[0](x, y), f[1](x, y)]),
                             dirichlet=lambda x, y: np.stack([u[0](x, y), u[1](x, y)])), u


@pytest.mark.parametrize("k", ORDERS)
@pytest.mark.parametrize("scheme", ("fve2l", "fem"))
def test_constants_in_kernel(k, scheme):
    pr, _ = scalar_poly_problem(k)
    s = assemble(perturbed_mesh(3, seed=k), k, pr, scheme)
    assert np.abs(s.full_matrix @ np.ones(s.n)).max() < 1e-12


@pytest.mark.parametrize("k", ORDERS)
def test_rigid_motions_in_kernel(k):
    pr, _ = elastic_poly_problem(k)
    s = assemble(perturbed_mesh(3, seed=k), k, pr)
    xy = s.dofmap.coordinates
    for mode in (np.column_stack([np.ones(len(xy)), np.zeros(len(xy))]),
                 np.column_stack([np.zeros(len(xy)), np.ones(len(xy))]),
                 np.column_stack([-xy[:, 1], xy[:, 0]])):
        assert np.abs(s.full_matrix @ mode.ravel()).max() < 1e-11


@pytest.mark.parametrize("k", ORDERS)
def test_fem_symmetric(k):
    pr, _ = scalar_poly_problem(k)
    a = assemble(perturbed_mesh(3), k, pr, "fem").full_matrix
    assert abs(a - a.T).max() < 1e-12


@pytest.mark.parametrize("k", ORDERS)
def test_fve2l_nonsymmetric(k):
    pr, _ = scalar_poly_problem(k, np.eye(2))
    a = assemble(build_structured(2), k, pr).full_matrix
    assert abs(a - a.T).max() > 1e-3


@pytest.mark.parametrize("k", ORDERS)
def test_element_matrix_similarity_invariance(k):
    """For D = I the local matrix is invariant under translation, rotation and scaling."""
    pr = EllipticProblem(forcing=lambda x, y: 0 * x)
    v = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]])
    c, s = np.cos(0.7), np.sin(0.7)
    w = 2.5 * v @ np.array([[c, s], [-s, c]]) + [3.0, -1.0]
    np.testing.assert_allclose(element_matrix(v, k, pr)[0], element_matrix(w, k, pr)[0], atol=1e-12)


def test_bubble_second_layer_entry():
    """Row psi_7, column 27 l1 l2 l3: minus the boundary flux, which is -int lap = 18."""
    pr = EllipticProblem(forcing=lambda x, y: 0 * x)
    K, _ = element_matrix(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 2, pr)
    assert K[6, 6] == pytest.approx(18.0, rel=1e-13)


def test_second_layer_row_is_pure_flux():
    """psi_7 is constant, so its row only sees -int_dK grad phi . n = -int_K lap phi."""
    pr = EllipticProblem(forcing=lambda x, y: 0 * x)
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    K, _ = element_matrix(v, 2, pr)
    assert K[6].sum() == pytest.approx(0.0, abs=1e-13)
    # -int_K lap(27 l1 l2 l3) = 9 |K| sum |grad l_i|^2, |grad l_i| = |e_i| / (2 |K|)
    area = np.sqrt(3) / 4
    grad_sq = 3 * (1 / (2 * area)) ** 2
    assert K[6, 6] == pytest.approx(9 * area * grad_sq, rel=1e-12)


@pytest.mark.parametrize("k", ORDERS)
def test_scalar_polynomial_reproduced(k):
    pr, u = scalar_poly_problem(k)
    s = apply_dirichlet(assemble(perturbed_mesh(4, seed=k), k, pr))
    x = solve(s).x
    xy = s.dofmap.coordinates
    assert np.abs(x - u(xy[:, 0], xy[:, 1])).max() <= 1e-10
    rep = conservation_report(s, x)
    for layer in (1, 2):
        for form in ("flux", "equa"):
            assert rep.max_abs(layer, form) <= 1e-10


@pytest.mark.parametrize("k", ORDERS)
def test_elastic_polynomial_reproduced(k):
    pr, u = elastic_poly_problem(k)
    s = apply_dirichlet(assemble(perturbed_mesh(3, seed=k + 10), k, pr))
    x = solve(s).x.reshape(-1, 2)
    xy = s.dofmap.coordinates
    ex = np.column_stack([u[0](xy[:, 0], xy[:, 1]), u[1](xy[:, 0], xy[:, 1])])
    assert np.abs(x - ex).max() <= 1e-10


def test_interpolate_and_dirichlet():
    pr, u = scalar_poly_problem(2)
    s = apply_dirichlet(assemble(build_structured(3), 2, pr))
    vals = interpolate(s.dofmap, u)
    np.testing.assert_allclose(vals[s.boundary], s.boundary_values)
    rows = s.matrix[s.boundary]
    assert np.allclose(rows.toarray(), np.eye(s.n)[s.boundary])
    assert np.allclose(s.matrix[:, s.boundary].toarray()[s.interior], 0)
    with pytest.raises(AssemblyError):
        apply_dirichlet(assemble(build_structured(3), 2, pr), dofs=s.interior[:1])


def test_lame_tensor_symmetries():
    C = lame_tensor(1.3, 0.7)
    assert np.allclose(C, C.transpose(2, 3, 0, 1))
    assert np.allclose(C, C.transpose(1, 0, 2, 3))
    with pytest.raises(AssemblyError):
        ElasticityProblem(1.0, 0.0, forcing=lambda x, y: 0 * x)


def test_matrix_market_roundtrip(tmp_path):
    pr, _ = scalar_poly_problem(3)
    s = apply_dirichlet(assemble(build_structured(2), 3, pr))
    write_matrix_market(s, tmp_path / "a.mtx")
    back = sp.csr_matrix(scipy.io.mmread(str(tmp_path / "a.mtx")))
    assert abs(back - s.matrix).max() == 0
