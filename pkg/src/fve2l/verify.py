"""Manufactured problems, error norms, FEM oracle and convergence studies."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import refelem
from .assembly import (ElasticityProblem, EllipticProblem, SparseSystem, apply_dirichlet, assemble,
                       interpolate)
from .mesh import DofMap, average_size, build_structured, mesh_size
from .quadrature import triangle_rule
from .solver import SolverError, condition_number, solve
from .stability import mapped_matrix

EXAMPLE1_DOMAIN = ((-1.0, 1.0), (-1.0, 1.0))
EXAMPLE2_DOMAIN = ((0.0, 1.0), (0.0, 1.0))


class VerifyError(ValueError):
    pass


# ------------------------------------------------------------- examples

def example1() -> EllipticProblem:
    """-lap u = -5 exp(x + 2y) on (-1, 1)^2, u = exp(x + 2y)."""

    def u(x, y):
        return np.exp(x + 2 * y)

    def grad(x, y):
        e = np.exp(x + 2 * y)
        return np.stack([e, 2 * e])

    def f(x, y):
        return -5 * np.exp(x + 2 * y)

    return EllipticProblem(forcing=f, dirichlet=u, diffusion=np.eye(2), exact=u, exact_grad=grad,
                           gamma=(1.0, 1.0), name="example1")


def example2(lam=1.0, mu=2.0) -> ElasticityProblem:
    """Lame problem on (0, 1)^2, u = (sin(pi x) sin(pi y), 16 x(x-1) y(y-1))."""
    pi = np.pi

    def u(x, y):
        return np.stack([np.sin(pi * x) * np.sin(pi * y), 16 * x * (x - 1) * y * (y - 1)])

    def grad(x, y):
        sx, cx, sy, cy = np.sin(pi * x), np.cos(pi * x), np.sin(pi * y), np.cos(pi * y)
        return np.array([[pi * cx * sy, pi * sx * cy],
                         [16 * (2 * x - 1) * y * (y - 1), 16 * x * (x - 1) * (2 * y - 1)]])

    def f(x, y):
        # -div sigma = -(mu lap u + (lam + mu) grad div u)
        ss = np.sin(pi * x) * np.sin(pi * y)
        cc = np.cos(pi * x) * np.cos(pi * y)
        lap1 = -2 * pi ** 2 * ss
        lap2 = 32 * (x * x - x + y * y - y)
        gdiv1 = -pi ** 2 * ss + 16 * (2 * x - 1) * (2 * y - 1)
        gdiv2 = pi ** 2 * cc + 32 * (x * x - x)
        return -np.stack([mu * lap1 + (lam + mu) * gdiv1, mu * lap2 + (lam + mu) * gdiv2])

    return ElasticityProblem(lam, mu, f, dirichlet=u, exact=u, exact_grad=grad, name="example2")


PROBLEMS = {"example1": (example1, EXAMPLE1_DOMAIN), "example2": (example2, EXAMPLE2_DOMAIN)}


def get_problem(name):
    try:
        factory, domain = PROBLEMS[name]
    except KeyError:
        raise VerifyError(f"unknown problem {name!r}; expected one of {sorted(PROBLEMS)}") from None
    return factory(), domain


# ---------------------------------------------------------------- norms

def error_norms(u, problem, mesh, order, dofmap=None, degree=None):
    """(L2, H1-seminorm) of exact - u_h, integrated elementwise."""
    if problem.exact is None or problem.exact_grad is None:
        raise VerifyError("problem has no exact solution")
    k = refelem.check_order(order)
    dofmap = dofmap or DofMap(mesh, k)
    m = problem.ncomp
    rule = triangle_rule(degree or 2 * k + 4)
    phi = refelem.trial_values(k, rule.points)
    g = np.stack([refelem.trial_values(k, rule.points, 1, 0),
                  refelem.trial_values(k, rule.points, 0, 1)], axis=-1)
    aff = mesh.affine
    U = np.asarray(u, dtype=float).reshape(-1, m)[dofmap.local_to_global]  # (T, N, m)
    uh = np.einsum("qn,tna->atq", phi, U)
    gp = np.einsum("qnb,tbi->tqni", g, aff.inv)
    guh = np.einsum("tqni,tna->atiq", gp, U)  # (m, T, 2, q)
    xy = aff(rule.points)
    x, y = xy[..., 0], xy[..., 1]
    ue = np.asarray(problem.exact(x, y), dtype=float).reshape(m, *x.shape)
    ge = np.asarray(problem.exact_grad(x, y), dtype=float).reshape(m, 2, *x.shape)  # (m, 2, T, q)
    ge = np.moveaxis(ge, 1, 2)
    wd = rule.weights[None, :] * aff.det[:, None]
    l2 = np.sqrt(np.einsum("tq,atq->", wd, (ue - uh) ** 2))
    h1 = np.sqrt(np.einsum("tq,atiq->", wd, (ge - guh) ** 2))
    return float(l2), float(h1)


# ------------------------------------------------------------------ FEM

def fem_oracle(mesh, order, problem) -> SparseSystem:
    """Symmetric Galerkin system in the same trial space and DOF map."""
    return assemble(mesh, order, problem, scheme="fem")


# ---------------------------------------------------------- convergence

def fit_order(h, err):
    """Least-squares slope of log(err) against log(h)."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    if len(h) < 2:
        raise VerifyError("need at least two levels to fit an order")
    if np.any(err <= 0):
        raise VerifyError("errors must be positive to fit an order")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class ConvergenceRow:
    n: int
    h: float
    l2: float
    h1: float
    dofs: int
    residual: float


@dataclass
class ConvergenceTable:
    problem: str
    order: int
    scheme: str = "fve2l"
    rows: list = field(default_factory=list)
    fit_levels: int = 3

    def orders(self, levels=None):
        levels = levels or self.fit_levels
        if len(self.rows) < 3:
            raise VerifyError("at least 3 levels are needed for a fit")
        rows = self.rows[-levels:]
        h = [r.h for r in rows]
        return fit_order(h, [r.l2 for r in rows]), fit_order(h, [r.h1 for r in rows])

    def plot_data(self):
        """(log10 n, log10 L2, log10 H1) rows."""
        return [(np.log10(r.n), np.log10(r.l2), np.log10(r.h1)) for r in self.rows]

    def to_dict(self):
        d = {"problem": self.problem, "order": self.order, "scheme": self.scheme,
             "rows": [r.__dict__ for r in self.rows]}
        if len(self.rows) >= 3:
            l2, h1 = self.orders()
            d["fitted_L2_order"], d["fitted_H1_order"] = l2, h1
        return d

    def to_json(self, path=None, **kw):
        s = json.dumps(self.to_dict(), **kw)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "h", "L2_error", "H1_error", "dofs", "residual"])
            for r in self.rows:
                w.writerow([r.n, f"{r.h:.17g}", f"{r.l2:.17g}", f"{r.h1:.17g}", r.dofs, f"{r.residual:.17g}"])
            if len(self.rows) >= 3:
                l2, h1 = self.orders()
                w.writerow([])
                w.writerow(["fitted_L2_order", f"{l2:.17g}"])
                w.writerow(["fitted_H1_order", f"{h1:.17g}"])


def solve_problem(problem, domain, n, order, scheme="fve2l", tol=1e-12):
    mesh = build_structured(n, domain)
    system = apply_dirichlet(assemble(mesh, order, problem, scheme))
    rep = solve(system, tol=tol)
    return mesh, system, rep


def _level(problem, domain, n, order, scheme, tol):
    mesh, system, rep = solve_problem(problem, domain, n, order, scheme, tol)
    l2, h1 = error_norms(rep.x, problem, mesh, order, system.dofmap)
    return ConvergenceRow(int(n), mesh_size(mesh), l2, h1, int(system.n), rep.residual)


def worker_count():
    try:
        cap = int(os.environ.get("FVE2L_THREADS", "0"))
    except ValueError:
        cap = 0
    ncpu = os.cpu_count() or 1
    return max(1, min(cap, ncpu) if cap > 0 else ncpu)


def convergence_study(problem, order, ns, domain=None, scheme="fve2l", tol=1e-12, name=None,
                      workers=None) -> ConvergenceTable:
    """Solve on each n x n structured mesh and tabulate errors."""
    if isinstance(problem, str):
        name = name or problem
        problem, dom = get_problem(problem)
        domain = domain or dom
    if domain is None:
        raise VerifyError("domain required for a user-supplied problem")
    ns = [int(n) for n in ns]
    if len(ns) < 3:
        raise VerifyError("a convergence study needs at least 3 mesh sizes")
    table = ConvergenceTable(name or getattr(problem, "name", "problem"), order, scheme)
    workers = workers or worker_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(_level, problem, domain, n, order, scheme, tol) for n in ns]
        for fut in futs:
            try:
                table.rows.append(fut.result())
            except SolverError as exc:
                exc.table = table  # levels finished so far
                raise
    return table


# ----------------------------------------------------- condition numbers

@dataclass
class ConditionRow:
    n: int
    h_bar: float
    dofs: int
    kappa: float
    kappa_fem: float


@dataclass
class ConditionStudy:
    problem: str
    order: int
    rows: list = field(default_factory=list)

    def slopes(self):
        """Growth rates of kappa in 1/h_bar for (FVE-2L, FEM)."""
        h = [r.h_bar for r in self.rows]
        return -fit_order(h, [r.kappa for r in self.rows]), -fit_order(h, [r.kappa_fem for r in self.rows])

    def to_dict(self):
        d = {"problem": self.problem, "order": self.order, "rows": [r.__dict__ for r in self.rows]}
        if len(self.rows) >= 2:
            d["slope"], d["slope_fem"] = self.slopes()
        return d

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "h_bar", "dofs", "kappa_fve2l", "kappa_fem"])
            for r in self.rows:
                w.writerow([r.n, f"{r.h_bar:.17g}", r.dofs, f"{r.kappa:.17g}", f"{r.kappa_fem:.17g}"])


def _cond_level(problem, domain, n, order, params):
    mesh = build_structured(n, domain)
    fve = apply_dirichlet(assemble(mesh, order, problem, "fve2l"))
    fem = apply_dirichlet(assemble(mesh, order, problem, "fem"))
    a, b = params if params is not None else (None, None)
    kappa = condition_number(mapped_matrix(fve, a, b))
    kappa_fem = condition_number(fem.reduced_matrix())
    return ConditionRow(int(n), average_size(mesh), int(fve.interior.size), kappa, kappa_fem)


def condition_study(problem, order, ns, domain=None, params=None, name=None, workers=None) -> ConditionStudy:
    """kappa = sigma_max / lambda_min(sym) of the mapped FVE-2L matrix and of FEM.

    The FVE-2L matrix is G^T A, the scheme tested with the mapped trial
    basis (see ``stability.mapped_matrix``); ``params`` overrides the
    default feasible (a, b).
    """
    if isinstance(problem, str):
        name = name or problem
        problem, dom = get_problem(problem)
        domain = domain or dom
    if domain is None:
        raise VerifyError("domain required for a user-supplied problem")
    ns = [int(n) for n in ns]
    if len(ns) < 2:
        raise VerifyError("a condition-number study needs at least 2 mesh sizes")
    study = ConditionStudy(name or getattr(problem, "name", "problem"), order)
    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        futs = [pool.submit(_cond_level, problem, domain, n, order, params) for n in ns]
        study.rows = [f.result() for f in futs]
    return study
