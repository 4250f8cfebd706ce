"""The ``fve2l`` command.

Subcommands write machine-readable files into ``--out`` plus a
run-manifest.json listing every input, library version and output file.

Output files
------------
solution.csv       dof, x, y, value (elasticity: dof = 2*node + component)
conservation.csv   layer, element, centroid_x, centroid_y, flux_residual,
                   equation_residual (elasticity: _1/_2 suffixed pairs)
convergence.csv    n, h, L2_error, H1_error, dofs, residual, then fitted orders
convergence.json   the same table plus fitted orders
stability.json     order, a, b, r1_lower, BN_degrees, feasible, curve, ...
condnum.csv        n, h_bar, dofs, kappa_fve2l, kappa_fem

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 infeasible
stability parameters.
"""
from __future__ import annotations

import argparse
import importlib.util
import json
import os
import platform
import sys
import traceback

import numpy as np
import scipy

from . import __version__, stability
from .assembly import apply_dirichlet, assemble
from .conservation import conservation_report
from .mesh import MeshError, build_structured, read_mesh
from .solver import SolverError, solve
from .verify import VerifyError, condition_study, convergence_study, get_problem

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4
SUBCOMMANDS = ("solve", "convergence", "conservation", "stability", "condnum")
PARAM_SOURCES = ("table2", "file", "optimize")
DEFAULT_NS = {"solve": "8", "conservation": "8", "convergence": "4,8,16,32", "condnum": "4,8,16,32"}


class UsageError(Exception):
    pass


def fmt(x):
    return f"{x:.17g}"


# --------------------------------------------------------------- parsing

def _common(p):
    p.add_argument("--order", "-k", type=int, choices=(2, 3, 4), default=2, help="scheme order k")
    p.add_argument("--problem", choices=("example1", "example2"), default="example1")
    p.add_argument("--n", default=None, help="mesh sizes, comma separated (n x n structured mesh)")
    p.add_argument("--mesh", default=None, help="mesh file ('V T' header, 'x y marker', 'i j k')")
    p.add_argument("--out", "-o", default=".", help="output directory")
    p.add_argument("--tol", type=float, default=1e-12, help="relative solver tolerance")
    p.add_argument("--seed", type=int, default=0, help="optimizer seed")
    p.add_argument("--params", choices=PARAM_SOURCES, default=None,
                   help="trial-to-test parameters: table2, file (--params-file) or optimize")
    p.add_argument("--params-file", default=None, help='JSON file {"a": [...], "b": [...]}')
    p.add_argument("--variant", choices=stability.VARIANTS, default=stability.DEFAULT_VARIANT,
                   help="reading of H used by the stability analysis")
    p.add_argument("--samples", dest="N", type=int, default=100, help="number of curve samples N for B_N")
    p.add_argument("--budget", type=int, default=5000, help="optimizer evaluation budget")
    p.add_argument("--plots", action="store_true", help="also write PNG figures (needs matplotlib)")
    p.add_argument("--config", default=None, help="key=value file; command-line flags take precedence")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fve2l", description=__doc__.split("\n\n")[0],
        epilog=__doc__[__doc__.index("Output files"):], formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"fve2l {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "solve one problem and write solution.csv",
        "convergence": "error norms and fitted orders over several meshes",
        "conservation": "local conservation residuals on both dual layers",
        "stability": "minimum-angle bound B_N for trial-to-test parameters",
        "condnum": "condition-number growth against the Galerkin FEM",
    }
    for name in SUBCOMMANDS:
        _common(sub.add_parser(name, help=helps[name], description=helps[name]))
    return parser


def read_config(path):
    """Plain key=value lines; '#' starts a comment, keys use flag names."""
    cfg = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            cfg[key.lstrip("-").replace("-", "_")] = val
    return cfg


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except UsageError as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        bad = sorted(set(cfg) - set(known) - {"command"})
        if bad:
            parser.error(f"unknown config keys: {', '.join(bad)}")
        cfg.pop("command", None)
        defaults = {}
        for key, val in cfg.items():
            act = known[key]
            if isinstance(act, argparse._StoreTrueAction):
                defaults[key] = val.lower() in ("1", "true", "yes", "on")
            else:
                conv = act.type or str
                try:
                    defaults[key] = conv(val)
                except ValueError:
                    parser.error(f"config key {key}: invalid value {val!r}")
                if act.choices is not None and defaults[key] not in act.choices:
                    parser.error(f"config key {key}: {val!r} not in {list(act.choices)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    try:
        args.ns = _parse_ns(args.n or DEFAULT_NS.get(args.command, "8"))
    except ValueError:
        parser.error(f"--n must be a comma separated list of integers, got {args.n!r}")
    if any(n < 2 for n in args.ns):
        parser.error("mesh sizes must be >= 2")
    if args.command == "convergence" and len(args.ns) < 3:
        parser.error("convergence needs at least 3 mesh sizes")
    if args.command == "condnum" and len(args.ns) < 2:
        parser.error("condnum needs at least 2 mesh sizes")
    if args.params == "file" and not args.params_file:
        parser.error("--params file requires --params-file")
    if args.tol <= 0 or args.N < 1 or args.budget < 1:
        parser.error("--tol, --samples and --budget must be positive")
    return args


def _parse_ns(text):
    return [int(s) for s in str(text).split(",") if s.strip()]


# ------------------------------------------------------------- commands

class Run:
    """Output bookkeeping for one invocation."""

    def __init__(self, args, argv):
        self.args, self.argv = args, list(argv)
        self.out = args.out
        self.outputs = []
        self.summary = {}
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, allow_nan=True)

    def manifest(self, status, code, error=None):
        cfg = {k: v for k, v in vars(self.args).items()}
        doc = {
            "command": self.args.command,
            "argv": self.argv,
            "config": cfg,
            "status": status,
            "exit_code": code,
            "outputs": list(self.outputs),
            "summary": self.summary,
            "threads": os.environ.get("FVE2L_THREADS"),
            "versions": {"fve2l": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
        }
        if error is not None:
            doc["error"] = error
        with open(os.path.join(self.out, "run-manifest.json"), "w") as fh:
            json.dump(doc, fh, indent=2, default=str)


def _mesh_and_problem(args):
    problem, domain = get_problem(args.problem)
    if args.mesh:
        mesh = read_mesh(args.mesh)
    else:
        mesh = build_structured(args.ns[0], domain)
    return mesh, problem


def _solve(args):
    mesh, problem = _mesh_and_problem(args)
    system = apply_dirichlet(assemble(mesh, args.order, problem))
    rep = solve(system, tol=args.tol)
    return mesh, system, rep


def cmd_solve(run):
    args = run.args
    _, system, rep = _solve(args)
    xy = system.dof_coordinates()
    with open(run.path("solution.csv"), "w") as fh:
        fh.write("dof,x,y,value\n")
        for i, (p, v) in enumerate(zip(xy, rep.x)):
            fh.write(f"{i},{fmt(p[0])},{fmt(p[1])},{fmt(v)}\n")
    run.summary = {"dofs": int(system.n), "residual": rep.residual, "method": rep.method}
    return EXIT_OK


def cmd_convergence(run):
    args = run.args
    table = convergence_study(args.problem, args.order, args.ns, tol=args.tol)
    table.to_csv(run.path("convergence.csv"))
    with open(run.path("convergence.json"), "w") as fh:
        fh.write(table.to_json(indent=2))
    l2, h1 = table.orders()
    run.summary = {"fitted_L2_order": l2, "fitted_H1_order": h1}
    if args.plots:
        from .plotting import convergence_figure
        convergence_figure(table, run.path("convergence.png"))
    return EXIT_OK


def cmd_conservation(run):
    args = run.args
    _, system, rep = _solve(args)
    cons = conservation_report(system, rep.x)
    cons.to_csv(run.path("conservation.csv"))
    summ = {}
    for layer in (1, 2):
        flux, equa = cons.global_residuals(layer)
        summ[f"layer{layer}"] = {
            "max_abs_flux": cons.max_abs(layer, "flux"),
            "max_abs_equation": cons.max_abs(layer, "equa"),
            "global_flux": flux.tolist(),
            "global_equation": equa.tolist(),
        }
    summ["layer1"]["max_abs_flux_interior"] = cons.max_abs(1, "flux", interior_only=True)
    run.summary = summ
    if args.plots:
        from .plotting import conservation_figure
        for layer in (1, 2):
            conservation_figure(cons, run.path(f"conservation_layer{layer}.png"), layer=layer)
    return EXIT_OK


def _load_params(args, order):
    if args.params == "file":
        try:
            with open(args.params_file) as fh:
                d = json.load(fh)
            return tuple(d["a"]), tuple(d["b"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read parameters from {args.params_file}: {exc}") from exc
    return stability.TABLE2[order]


def cmd_stability(run):
    args = run.args
    k = args.order
    if args.params == "optimize":
        try:
            rep = stability.optimize_parameters(k, budget=args.budget, seed=args.seed, N=args.N,
                                                variant=args.variant)
        except stability.InfeasibleParametersError as exc:
            run.summary = {"error": str(exc)}
            return EXIT_INFEASIBLE
    else:
        a, b = _load_params(args, k)
        try:
            rep = stability.evaluate(k, a, b, N=args.N, variant=args.variant)
        except stability.StabilityError as exc:
            raise UsageError(str(exc)) from exc
    run.write_json("stability.json", rep.to_dict())
    run.summary = {"BN_degrees": rep.BN_degrees, "feasible": rep.feasible,
                   "min_eigenvalue": rep.min_eigenvalue}
    if args.plots:
        from .plotting import stability_figure
        stability_figure(rep, run.path("stability.png"))
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def cmd_condnum(run):
    args = run.args
    params = None
    if args.params == "optimize":
        rep = stability.optimize_parameters(args.order, budget=args.budget, seed=args.seed, N=args.N,
                                            variant="energy_nodal")
        params = (rep.a, rep.b)
    elif args.params is not None:
        params = _load_params(args, args.order)
    study = condition_study(args.problem, args.order, args.ns, params=params)
    study.to_csv(run.path("condnum.csv"))
    s, s_fem = study.slopes()
    run.summary = {"slope": s, "slope_fem": s_fem}
    if args.plots:
        from .plotting import condition_figure
        condition_figure(study, run.path("condnum.png"))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "convergence": cmd_convergence, "conservation": cmd_conservation,
            "stability": cmd_stability, "condnum": cmd_condnum}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.plots and importlib.util.find_spec("matplotlib") is None:
        print("fve2l: --plots needs matplotlib (pip install fve2l[plots])", file=sys.stderr)
        return EXIT_USAGE
    try:
        run = Run(args, argv)
    except OSError as exc:
        print(f"fve2l: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        code = COMMANDS[args.command](run)
    except (UsageError, VerifyError, MeshError, FileNotFoundError) as exc:
        print(f"fve2l: {exc}", file=sys.stderr)
        run.manifest("usage_error", EXIT_USAGE, {"type": type(exc).__name__, "message": str(exc)})
        return EXIT_USAGE
    except stability.InfeasibleParametersError as exc:
        print(f"fve2l: {exc}", file=sys.stderr)
        run.manifest("infeasible", EXIT_INFEASIBLE, {"type": type(exc).__name__, "message": str(exc)})
        return EXIT_INFEASIBLE
    except (SolverError, stability.StabilityError, np.linalg.LinAlgError, ArithmeticError,
            RuntimeError) as exc:
        diag = {"type": type(exc).__name__, "message": str(exc),
                "history": getattr(exc, "history", None), "traceback": traceback.format_exc()}
        run.write_json("diagnostic.json", diag)
        print(f"fve2l: numerical failure: {exc}", file=sys.stderr)
        run.manifest("numerical_failure", EXIT_NUMERICAL, {"type": diag["type"], "message": diag["message"]})
        return EXIT_NUMERICAL
    status = {EXIT_OK: "ok", EXIT_INFEASIBLE: "infeasible"}.get(code, "error")
    if code == EXIT_INFEASIBLE:
        print("fve2l: stability parameters are infeasible (H(1,1) not positive semidefinite)",
              file=sys.stderr)
    run.manifest(status, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
