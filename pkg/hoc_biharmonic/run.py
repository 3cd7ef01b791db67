import argparse
import json
import logging
import os
import sys

from hoc_biharmonic import derive, harness
from hoc_biharmonic.grid import UniformGrid
from hoc_biharmonic.stencils import stencils_to_json

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def parse_arguments(argv=None):
    parser = argparse.ArgumentParser(
        description="Fourth-order compact finite difference solver for the biharmonic equation"
    )
    parser.add_argument("--config", type=str, help="Path to a study configuration JSON file")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    overrides = argparse.ArgumentParser(add_help=False)
    overrides.add_argument("--n", type=int, nargs="+", help="Grid sizes (cells per axis)")
    overrides.add_argument("--boundary", type=str, help="first, second, mixed or a JSON side map")
    overrides.add_argument("--problem", type=str, help="Problem registry name")
    overrides.add_argument("--tol", type=float, help="Relative residual tolerance of the solver")
    overrides.add_argument("--out", type=str, help="Output directory")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("solve", parents=[overrides], help="Solve once on the first grid size")
    commands.add_parser("refine", parents=[overrides], help="Grid refinement study")
    cond = commands.add_parser("cond", parents=[overrides], help="Condition number study")
    cond.add_argument("--scheme", choices=["coupled", "13-point"])
    cond.add_argument("--dim", type=int, choices=[2, 3])
    stokes = commands.add_parser("stokes", parents=[overrides], help="Stokes cavity self-convergence")
    stokes.add_argument("--n-ref", type=int, dest="n_ref")
    derive_cmd = commands.add_parser("derive-stencil", parents=[overrides], help="Derive the 3D boundary stencil")
    derive_cmd.add_argument("--no-symmetry", action="store_true")
    derive_cmd.add_argument("--footprint", choices=["compact", "full"], default="compact")
    commands.add_parser("verify", parents=[overrides], help="Run every certification check")
    return parser.parse_args(argv)


def apply_overrides(config, args):
    if getattr(args, "n", None):
        config["grid"]["n"] = list(args.n)
        config["cond"]["n"] = list(args.n)
        config["stokes"]["n"] = list(args.n)
    if getattr(args, "boundary", None):
        boundary = args.boundary
        config["boundary"] = json.loads(boundary) if boundary.startswith("{") else boundary
    if getattr(args, "problem", None):
        config["problem"] = {"name": args.problem, "params": {}}
    if getattr(args, "tol", None):
        config["solver"]["tol"] = args.tol
    if getattr(args, "out", None):
        config["output"]["dir"] = args.out
    if getattr(args, "scheme", None):
        config["cond"]["scheme"] = args.scheme
    if getattr(args, "dim", None):
        config["cond"]["dim"] = args.dim
    if getattr(args, "n_ref", None):
        config["stokes"]["n_ref"] = args.n_ref
    return config


def _emit(config, report, solution=None, suffix=""):
    output = config["output"]
    formats = [f for f in output["formats"] if f != "grid" or solution is not None]
    paths = harness.emit_report(report, output["dir"], output["prefix"] + suffix, formats, solution)
    for path in paths:
        print(f"Wrote {path}")


def run_solve(config):
    problem = harness.problem_from_config(config)
    n = config["grid"]["n"]
    n = n[0] if isinstance(n, list) else n
    grid = UniformGrid.cube(problem.dim, n, config["grid"]["lo"], config["grid"]["hi"])
    solution = harness.solve_problem(problem.to_problem(config["boundary"]), grid, harness.solver_options(config))
    coords = grid.coordinates()
    e_u, _ = harness.error_norms(solution.u, harness.evaluate(problem.u, coords), grid.h, grid.dim)
    _, e_v = harness.error_norms(solution.v, harness.evaluate(problem.laplacian, coords), grid.h, grid.dim)
    print(f"{problem.name} N={n}: |E_U|_inf = {e_u:.5e}, |E_V|_L2 = {e_v:.5e}")
    output = config["output"]
    if "grid" in output["formats"]:
        _emit(config, None, solution, suffix="_grid")
    if output.get("plot"):
        _make_dir(output["dir"])
        harness.plot_solution(solution, os.path.join(output["dir"], f"{output['prefix']}_solution.png"))
    return 0


def run_refine(config):
    problem = harness.problem_from_config(config)
    n_list = config["grid"]["n"]
    report = harness.refine_study(
        problem, config["boundary"], n_list if isinstance(n_list, list) else [n_list],
        harness.solver_options(config), config.get("max_workers"),
    )
    print(harness.report_csv(report), end="")
    _emit(config, report)
    return 0 if harness.checks_pass(report, config["checks"]) else 1


def run_cond(config):
    cond = config["cond"]
    report = harness.cond_study(cond["scheme"], cond["n"], cond["dim"], cond["tol"])
    print(harness.report_csv(report), end="")
    _emit(config, report)
    return 0 if harness.checks_pass(report, config["checks"]) else 1


def run_stokes(config):
    stokes = config["stokes"]
    report = harness.stokes_study(
        stokes["n"], stokes["n_ref"], stokes["lid_speed"], harness.solver_options(config), config.get("max_workers"),
    )
    print(harness.report_csv(report), end="")
    _emit(config, report)
    return 0 if harness.checks_pass(report, config["checks"]) else 1


def _make_dir(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"Could not create output directory {out_dir}: {exc}") from exc


def _write(path, text):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as exc:
        raise OSError(f"Could not write {path}: {exc}") from exc


def run_derive(config, args):
    result = derive.solve_3d_boundary(symmetry=not args.no_symmetry, footprint=args.footprint)
    print(result.to_text())
    out_dir = config["output"]["dir"]
    _make_dir(out_dir)
    base = os.path.join(out_dir, "boundary_3d")
    _write(base + ".json", json.dumps(result.to_dict(), indent=2))
    _write(base + ".txt", result.to_text() + "\n")
    _write(os.path.join(out_dir, "stencils.json"), stencils_to_json())
    print(f"Derivation saved to {base}.json")
    return 0


def run_verify(config):
    report = harness.verify_all()
    print(report.to_text())
    return 0 if report.passed else 1


def main(argv=None):
    args = parse_arguments(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    config = apply_overrides(harness.load_config(args.config), args)

    if args.command == "solve":
        return run_solve(config)
    if args.command == "refine":
        return run_refine(config)
    if args.command == "cond":
        return run_cond(config)
    if args.command == "stokes":
        return run_stokes(config)
    if args.command == "derive-stencil":
        return run_derive(config, args)
    return run_verify(config)


if __name__ == "__main__":
    sys.exit(main())
