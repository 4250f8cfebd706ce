import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import perturbed_mesh
from fve2l.assembly import apply_dirichlet, assemble
from fve2l.conservation import (boundary_flux, conservation_report, global_residuals, local_equation_residual,
                                local_flux_residual, total_forcing)
from fve2l.solver import solve
from fve2l.verify import get_problem

ORDERS = (2, 3, 4)


def system(problem, k, n=4, seed=0):
    pr, dom = get_problem(problem)
    mesh = perturbed_mesh(n, 0.15, seed, domain=dom)
    return assemble(mesh, k, pr)


@pytest.mark.parametrize("k", ORDERS)
@pytest.mark.parametrize("problem", ("example1", "example2"))
@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_layer2_divergence_identity(k, problem, seed):
    """On a triangle, -int_dK sigma n and -int_K div sigma agree for any u_h."""
    s = system(problem, k, 3)
    u = np.random.default_rng(seed).uniform(-1, 1, s.n)
    rep = conservation_report(s, u)
    assert np.abs(rep.layer2_flux - rep.layer2_equa).max() <= 1e-12


@pytest.mark.parametrize("k", ORDERS)
@pytest.mark.parametrize("problem", ("example1", "example2"))
def test_layer1_sum_telescopes(k, problem):
    """Midline fluxes cancel between neighbouring pieces, leaving the domain boundary."""
    s = system(problem, k, 3, seed=k)
    u = np.random.default_rng(k).uniform(-1, 1, s.n)
    rep = conservation_report(s, u)
    flux_sum, _ = rep.global_residuals(1)
    expect = -boundary_flux(s, u) - total_forcing(s)
    np.testing.assert_allclose(flux_sum, expect, atol=1e-11)


def test_solution_residual_shapes_and_helpers():
    s = apply_dirichlet(system("example2", 2, 3))
    x = solve(s).x
    rep = conservation_report(s, x)
    V, T = s.mesh.n_vertices, s.mesh.n_triangles
    assert rep.layer1_flux.shape == (V, 2) and rep.layer2_equa.shape == (T, 2)
    assert rep.layer1_interior.sum() == V - len(s.mesh.boundary_vertices)
    np.testing.assert_allclose(local_flux_residual(s, x, 2, 3), rep.layer2_flux[3])
    np.testing.assert_allclose(local_equation_residual(s, x, 1, 5), rep.layer1_equa[5])
    g = global_residuals(s, x, 2)
    np.testing.assert_allclose(g[0], rep.layer2_flux.sum(axis=0), atol=1e-13)
    with pytest.raises(ValueError):
        rep.global_residuals(3)


def test_layer2_conserved_by_solution():
    s = apply_dirichlet(system("example1", 3, 4))
    rep = conservation_report(s, solve(s).x)
    assert rep.max_abs(2, "flux") <= 1e-10
    assert rep.max_abs(2, "equa") <= 1e-10


def test_centroids_inside_domain():
    s = system("example1", 2, 4)
    rep = conservation_report(s, np.zeros(s.n))
    for c in (rep.layer1_centroids, rep.layer2_centroids):
        assert np.all(np.abs(c) <= 1)


@pytest.mark.parametrize("problem,ncols", (("example1", 6), ("example2", 8)))
def test_csv(tmp_path, problem, ncols):
    s = apply_dirichlet(system(problem, 2, 2))
    rep = conservation_report(s, solve(s).x)
    path = tmp_path / "c.csv"
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert len(rows[0]) == ncols
    assert len(rows) == 1 + s.mesh.n_vertices + s.mesh.n_triangles
    assert float(rows[1][4]) == rep.layer1_flux[0, 0]
