"""Command-line front end: ``sparse-game <command> --config PATH --out DIR``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

from . import config as cfg
from .errors import ConfigError, ConvergenceError, InfeasibleError, SolverBlowUp
from .graph import nkh_table
from .io import write_outputs

log = logging.getLogger("sparse_game")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NOCONV = 0, 1, 2, 3, 4

CONSTANT_COLUMNS = ("h", "sup_next", "D", "gamma_h", "gamma_prod")


def _radii(doc, default):
    return doc.get("experiment", {}).get("radii", list(default))


def _game_theta(doc, g):
    from .decay import theta_from_game
    kind = doc.get("game", {}).get("type", "lq")
    spec = cfg.build_det(doc, g) if kind == "det" else cfg.build_lq(doc, g)
    return theta_from_game(spec.cost_bounds(), g)


def _feasible_rows(t, gamma, r, strict):
    from .decay import gamma_table
    try:
        return gamma_table(t, gamma, r)
    except InfeasibleError as exc:
        if strict:
            raise
        warnings.warn(f"{exc}; table truncated", RuntimeWarning, stacklevel=2)
    rows = []
    for h in range(1, r + 1):
        try:
            rows = gamma_table(t, gamma, h)
        except InfeasibleError:
            break
    return rows


def format_constants(rows) -> str:
    lines = [f"{'h':>4} {'sup_next':>9} {'D':>14} {'gamma_h':>14} {'gamma_prod':>14}"]
    for row in rows:
        lines.append(f"{row['h']:>4d} {row['sup_next']:>9d} {row['D']:>14.6e} "
                     f"{row['gamma_h']:>14.6e} {row['gamma_prod']:>14.6e}")
    return "\n".join(lines)


def cmd_constants(doc, args, solver):
    from .decay import theta_star, tilde_gamma
    g = cfg.build_graph(doc["graph"])
    root = cfg.check_root(doc, g)
    t = nkh_table(g, root)
    exp = doc.get("experiment", {})
    gamma = exp["gamma"] if "gamma" in exp else _game_theta(doc, g)
    if not gamma > 0:
        raise ConfigError("interaction level is zero; set experiment.gamma to tabulate constants")
    r = exp.get("r", t.h_star)
    th_star = theta_star(t)
    if gamma > th_star:
        msg = f"gamma={gamma:.6g} exceeds theta*={th_star:.6g}"
        if args.strict:
            raise InfeasibleError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    rows = _feasible_rows(t, gamma, r, args.strict)
    report = {"kind": "constants", "root": root, "gamma": gamma, "r": r, "theta_star": th_star,
              "h_star": t.h_star, "layer_sizes": [len(layer) for layer in t.layers], "rows": rows}
    if len(rows) == r and r < t.h_star:
        seq, total = tilde_gamma(t, gamma, r)
        report["tilde_gamma_seq"] = [float(x) for x in seq]
        report["tilde_gamma_r"] = total
    print(format_constants(rows))
    return list(CONSTANT_COLUMNS), [[row[c] for c in CONSTANT_COLUMNS] for row in rows], report


def _curve_outputs(kind, curve, root, solver, extra=None):
    report = {"kind": kind, "root": root, "solver": solver, "curve": curve.to_json_dict()}
    report.update(extra or {})
    return curve.columns(), curve.rows(), report


def cmd_reduce_ol(doc, args, solver):
    from .lq_openloop import reduction_experiment
    g = cfg.build_graph(doc["graph"])
    root = cfg.check_root(doc, g)
    spec = cfg.build_lq(doc, g)
    policy = doc.get("experiment", {}).get("boundary_policy", "frozen")
    curve = reduction_experiment(spec, root, _radii(doc, range(1, 9)), policy, solver["steps"],
                                 solver["check"], args.strict)
    return _curve_outputs("reduce-ol", curve, root, solver, {"boundary_policy": policy})


def cmd_reduce_dist(doc, args, solver):
    from .lq_distributed import distributed_reduction_experiment
    g = cfg.build_graph(doc["graph"])
    root = cfg.check_root(doc, g)
    spec = cfg.build_lq(doc, g)
    policy = doc.get("experiment", {}).get("boundary_policy", "frozen")
    curve = distributed_reduction_experiment(spec, root, _radii(doc, range(1, 9)), policy, solver["steps"],
                                             solver["damping"], solver["tol"], solver["max_iter"],
                                             solver["check"], args.strict)
    return _curve_outputs("reduce-dist", curve, root, solver, {"boundary_policy": policy})


def cmd_reduce_det(doc, args, solver):
    from .det_pontryagin import det_reduction_experiment
    g = cfg.build_graph(doc["graph"])
    root = cfg.check_root(doc, g)
    spec = cfg.build_det(doc, g)
    curve = det_reduction_experiment(spec, root, _radii(doc, range(1, 5)), solver["steps"], solver["tol"],
                                     solver["max_iter"], args.strict)
    return _curve_outputs("reduce-det", curve, root, solver)


def cmd_decay_v(doc, args, solver):
    from .lq_openloop import dv_decay_report, riccati_solve
    g = cfg.build_graph(doc["graph"])
    root = cfg.check_root(doc, g)
    spec = cfg.build_lq(doc, g)
    rep = dv_decay_report(riccati_solve(spec, steps=solver["steps"]), nkh_table(g, root))
    rows = [[k, dist, val] for k, dist, val in rep.rows]
    report = {"kind": "decay-v", "root": root, "solver": solver,
              "by_distance": {str(k): v for k, v in rep.by_distance.items()}, "slope": rep.slope}
    return ["player", "distance", "sup_norm"], rows, report


def cmd_perturb(doc, args, solver):
    import numpy as np
    from .lq_openloop import perturbation_experiment
    g = cfg.build_graph(doc["graph"])
    root = cfg.check_root(doc, g)
    spec = cfg.build_lq(doc, g)
    pert = doc.get("experiment", {}).get("perturb")
    if pert is None:
        raise ConfigError("perturb needs experiment.perturb.player")
    k = pert["player"]
    if k >= g.n:
        raise ConfigError(f"experiment.perturb.player={k} out of range for {g.n} players")
    new_mean = spec.init_mean[k] + np.asarray(pert.get("shift", 1.0), dtype=float)
    new_cov = pert.get("cov")
    try:
        res = perturbation_experiment(spec, k, new_mean, new_cov, root, solver["steps"], solver["check"])
    except ValueError as exc:
        raise ConfigError(f"experiment.perturb: {exc}") from exc
    columns = ["player"] + list(res)
    report = {"kind": "perturb", "root": root, "player": k, "solver": solver, "result": res}
    return columns, [[k] + list(res.values())], report


COMMANDS = {
    "constants": cmd_constants,
    "reduce-ol": cmd_reduce_ol,
    "reduce-dist": cmd_reduce_dist,
    "reduce-det": cmd_reduce_det,
    "decay-v": cmd_decay_v,
    "perturb": cmd_perturb,
}


def run(kind: str, config_path, out_dir=None, strict=False, steps=None, seed=None) -> int:
    """Run one experiment and write ``{out}/{kind}.csv`` and ``.json``; return the exit code."""
    args = argparse.Namespace(strict=strict)
    try:
        doc = cfg.load_config(config_path)
        if doc.get("kind", kind) != kind:
            raise ConfigError(f"config is for '{doc['kind']}', not '{kind}'")
        solver = cfg.solver_params(doc, steps, seed)
        out = Path(out_dir if out_dir is not None else doc.get("output", {}).get("dir", "out"))
        columns, rows, report = COMMANDS[kind](doc, args, solver)
        report["config"] = doc
        csv_path, _ = write_outputs(out, kind, columns, rows, report)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (InfeasibleError, SolverBlowUp) as exc:
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        log.error("no convergence: %s", exc)
        return EXIT_NOCONV
    log.info("wrote %s", csv_path)
    return EXIT_OK


def validate(inject_theta=None, only=None) -> int:
    from .acceptance import run_all
    outcomes = run_all(inject_theta=inject_theta, only=only)
    for o in outcomes:
        print(o.line(), flush=True)
    failed = sum(not o.passed for o in outcomes)
    print(f"{len(outcomes) - failed}/{len(outcomes)} criteria passed")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparse-game", description="Decay of distant-player influence in sparse network games.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, metavar="PATH")
        s.add_argument("--out", metavar="DIR", help="output directory (default: output.dir or ./out)")
        s.add_argument("--strict", action="store_true", help="abort when the smallness condition fails")
        s.add_argument("--steps", type=int, metavar="N")
        s.add_argument("--seed", type=int, metavar="N")
    v = sub.add_parser("validate", help="run the acceptance suite")
    v.add_argument("--inject-theta", type=float, metavar="X", help="override the benchmark interaction level")
    v.add_argument("--only", type=int, nargs="+", metavar="K", help="run only these criteria")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.command == "validate":
        return validate(args.inject_theta, args.only)
    if args.steps is not None and args.steps < 2:
        log.error("config error: --steps must be >= 2")
        return EXIT_CONFIG
    return run(args.command, args.config, args.out, args.strict, args.steps, args.seed)


if __name__ == "__main__":
    sys.exit(main())
