"""
Command-line experiment runner.

    distalloc run <config> [--verify] [--out DIR] [--step H] [--horizon T]
                           [--seed N] [--sweep] [--dump-config]
    distalloc check-params <config> [--dump-config]

``<config>`` is a path or the name of a bundled config (``example1_alg1``,
``example1_alg2``, ``example2_directed``, ``example2_undirected``).

Exit codes: 0 success, 1 gains fail their bounds (check-params), 2 config
cannot be parsed, 3 validation error, 4 divergence or numerical failure.
"""

import argparse
import json
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, build_problem, load_config
from .convex import ProjectionError
from .dynamics import (
    DivergenceError,
    DynParams,
    DynState,
    equilibrium_from_optimum,
    integrate,
    terminal_kkt,
)
from .graph import is_strongly_connected, is_undirected, is_weight_balanced
from .oracle import dual_solve
from .problem import ValidationError, parameter_bounds_alg1, parameter_bounds_alg2, validate

EXIT_OK, EXIT_GAINS, EXIT_PARSE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3, 4
AUTO_MARGIN = 1.05
VERIFY_TOL = 1e-2


class InvalidExperiment(Exception):
    """Config parsed but describes an experiment that cannot run."""


def bundled_configs():
    root = resources.files("distalloc") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_config(name) -> Path:
    """Path on disk, or a bundled config by name (with or without ``.cfg``)."""
    path = Path(name)
    if path.exists():
        return path
    stem = name[:-4] if name.endswith(".cfg") else name
    candidate = resources.files("distalloc") / "configs" / f"{stem}.cfg"
    if candidate.is_file():
        return Path(str(candidate))
    raise ConfigError(f"no such file, and no bundled config named {stem!r} "
                      f"(bundled: {', '.join(bundled_configs())})", source=name)


# -- experiment assembly -------------------------------------------------------

def _gain_bounds(cfg, problem):
    if cfg.algorithm == "alg1":
        return parameter_bounds_alg1(problem)
    return parameter_bounds_alg2(problem)


def resolve_params(cfg: ExperimentConfig, problem):
    """``DynParams`` for the run and where the gains came from."""
    raw = {"auto": True} if cfg.params == "auto" else dict(cfg.params)
    gains = {}
    source = "config"
    if raw.pop("auto", False):
        source = "auto"
        if cfg.algorithm == "alg1" and is_undirected(problem.graph) and problem.strong_convexity_modulus == 0:
            gains = {"k1": 1.0, "k2": 1.0, "k3": 1.0}
        else:
            try:
                b = _gain_bounds(cfg, problem)
            except ValueError as e:
                raise InvalidExperiment(f"cannot choose gains automatically: {e}") from None
            k1 = AUTO_MARGIN * b.k1_min
            gains = {"k1": k1, "k2": AUTO_MARGIN * b.k2_min(k1), "k3": 1.0}
    gains.update(raw)
    try:
        return DynParams(**gains), source
    except (TypeError, ValueError) as e:
        raise InvalidExperiment(f"params: {e}") from None


def initial_state(cfg: ExperimentConfig, problem) -> DynState:
    n, d = problem.n_agents, problem.decision_dim
    init = cfg.initial_state
    if init == "zeros":
        return DynState.zeros(problem)
    if init == "example1_alg2":
        # w = 10 at every agent but the last
        w = np.full((n, d), 10.0)
        w[-1] = 0.0
        z = np.zeros(n * d)
        return DynState.from_xsw(problem, z, z, w.ravel())
    if init == "random":
        rng = np.random.default_rng(cfg.seed)
        x, s, w = rng.normal(size=(3, n, d))
        if cfg.algorithm == "alg1":
            w -= w.mean(axis=0)
        return DynState.from_xsw(problem, x.ravel(), s.ravel(), w.ravel())
    z = np.zeros(n * d)
    try:
        return DynState.from_xsw(problem, *(init.get(k, z) for k in ("x", "s", "w")))
    except ValueError as e:
        raise InvalidExperiment(f"initial_state: {e}") from None


def prepare(cfg: ExperimentConfig):
    """Build and validate; raises :class:`InvalidExperiment` on hard errors.
    Returns ``(problem, params, param_source, init, diagnostics)``."""
    try:
        problem = build_problem(cfg)
        diags = validate(problem, seed=cfg.seed)
    except (ValueError, ValidationError) as e:
        raise InvalidExperiment(str(e)) from None
    errors = [str(dg) for dg in diags if dg.severity == "error"]
    if errors:
        raise InvalidExperiment("; ".join(errors))
    if cfg.algorithm == "alg2" and not is_undirected(problem.graph):
        raise InvalidExperiment("alg2 requires an undirected graph")
    params, source = resolve_params(cfg, problem)
    return problem, params, source, initial_state(cfg, problem), diags


def _blocks(v, d):
    return np.asarray(v).reshape(-1, d).tolist()


def run_experiment(cfg: ExperimentConfig, out_dir, verify=False, log=print):
    """Run one experiment and write its artifacts. Returns the summary dict.

    Raises :class:`InvalidExperiment` or :class:`DivergenceError`.
    """
    problem, params, source, init, diags = prepare(cfg)
    for dg in diags:
        log(str(dg), file=sys.stderr)
    d = problem.decision_dim
    want_lyap = bool(cfg.outputs.get("lyapunov"))
    sol = eq = None
    if verify or want_lyap:
        sol = dual_solve(problem)
        if want_lyap and sol.certified:
            eq = equilibrium_from_optimum(problem, sol.y_star, sol.s_star, params, cfg.algorithm)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = integrate(problem, params, init, cfg.algorithm, equilibrium=eq)
    wall = time.perf_counter() - t0
    kkt = terminal_kkt(problem, traj)
    term = traj.terminal

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / cfg.outputs["trajectory"], "w", encoding="utf-8", newline="") as fh:
        traj.write_csv(fh)
    summary = {
        "name": cfg.name,
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "params": {"k1": params.k1, "k2": params.k2, "k3": params.k3,
                   "step_size": params.step_size, "max_time": params.max_time,
                   "record_every": params.record_every, "source": source},
        "wall_time_s": wall,
        "final_time": float(traj.times[-1]),
        "stopped_early": traj.stopped_early,
        "terminal": {"y": _blocks(term.y, d), "s": _blocks(term.s, d),
                     "estimate": "final state" if term is traj.final else
                     f"average over the last {params.average_window:g} time units"},
        "final_state": {"y": _blocks(traj.final.y, d), "s": _blocks(traj.final.s, d),
                        "w": _blocks(traj.final.w, d)},
        "kkt": kkt.as_dict(),
        "kkt_max": kkt.max_residual(),
        "certified": kkt.certifies(),
        "diagnostics": [str(dg) for dg in diags],
    }
    if want_lyap:
        if eq is None:
            summary["lyapunov"] = None
        else:
            summary["lyapunov"] = {"times": traj.times.tolist(), "values": [float(v) for v in traj.lyapunov]}
    if verify:
        gap = float(np.max(np.abs(traj.final.y - sol.y_star))) if sol.certified else None
        summary["verify"] = {
            "y_star": _blocks(sol.y_star, d),
            "s_star": sol.s_star.tolist(),
            "oracle_certified": sol.certified,
            "oracle_message": sol.message,
            "max_abs_gap": gap,
            "tolerance": VERIFY_TOL,
            "within_tolerance": gap is not None and gap <= VERIFY_TOL,
        }
    with open(out_dir / cfg.outputs["summary"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


# -- parameter report ----------------------------------------------------------

def check_params_report(cfg: ExperimentConfig):
    """Plain-text report of spectral quantities and gain bounds.
    Returns ``(lines, ok)``."""
    problem = build_problem(cfg)
    lb = problem.laplacian
    g = problem.graph
    undirected = is_undirected(g)
    lines = [
        f"graph: {problem.n_agents} nodes, {'undirected' if undirected else 'directed'}, "
        f"strongly connected: {'yes' if is_strongly_connected(g) else 'no'}, "
        f"weight-balanced: {'yes' if is_weight_balanced(g) else 'no'}",
        f"lambda2(Sym(L)) = {lb.lambda2_sym:.6g}",
        f"||L|| = {lb.spectral_norm_L:.6g}",
        f"omega = {problem.strong_convexity_modulus:.6g}",
        f"algorithm: {cfg.algorithm}",
    ]
    if cfg.params == "auto" or cfg.params.get("auto"):
        try:
            params, _ = resolve_params(cfg, problem)
        except InvalidExperiment as e:
            return lines + [f"FAIL: {e}"], False
        gains = {"k1": params.k1, "k2": params.k2, "k3": params.k3}
        lines.append("gains: chosen automatically")
    else:
        gains = {k: cfg.params[k] for k in ("k1", "k2", "k3")}
    ok = True
    for k, v in gains.items():
        if not v > 0:
            lines.append(f"{k} = {v:g}: FAIL (gains must be positive)")
            ok = False
    fully_distributed = cfg.algorithm == "alg1" and undirected
    if fully_distributed:
        lines.append("fully distributed: no bound required")
    try:
        b = _gain_bounds(cfg, problem)
    except ValueError as e:
        lines.append(f"bounds unavailable: {e}")
        return lines, ok and fully_distributed
    k1, k2, k3 = gains["k1"], gains["k2"], gains["k3"]
    verdict = b.check(k1, k2, k3)
    tag = " (informational)" if fully_distributed else ""
    k2_bound = f"k2 > {b.k2_min(k1):.6g}" if k1 > 0 else "undefined for k1 <= 0"
    lines += [
        f"k1 = {k1:g}, bound k1 > {b.k1_min:.6g}: {'pass' if verdict['k1'] else 'FAIL'}{tag}",
        f"k2 = {k2:g}, bound {k2_bound}: {'pass' if verdict['k2'] else 'FAIL'}{tag}",
        f"k3 = {k3:g}, bound k3 > 0: {'pass' if verdict['k3'] else 'FAIL'}",
    ]
    lines += [f"note: {n}" for n in b.notes]
    if not fully_distributed:
        ok = ok and all(verdict.values())
    return lines, ok


# -- entry point ---------------------------------------------------------------

def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    params = {}
    if getattr(args, "step", None) is not None:
        params["step_size"] = args.step
    if getattr(args, "horizon", None) is not None:
        params["max_time"] = args.horizon
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["outputs"] = {**cfg.outputs, "dir": args.out}
    if getattr(args, "verify", False):
        changes["verify"] = True
    return cfg.with_overrides(params=params, **changes)


def _run_variant(doc, out_dir, verify):
    """Worker for --sweep; takes the config as a dict so it pickles."""
    cfg = ExperimentConfig.from_dict(doc)
    try:
        run_experiment(cfg, out_dir, verify, log=lambda *a, **k: None)
    except InvalidExperiment as e:
        return cfg.name, EXIT_INVALID, str(e)
    except (DivergenceError, ProjectionError) as e:
        return cfg.name, EXIT_DIVERGED, str(e)
    return cfg.name, EXIT_OK, f"wrote {out_dir}"


def _cmd_run(cfg: ExperimentConfig, args):
    out_dir = Path(cfg.outputs["dir"])
    if args.sweep:
        if not cfg.sweep:
            print("error: --sweep given but the config has no sweep variants", file=sys.stderr)
            return EXIT_PARSE
        jobs = []
        for v in cfg.sweep:
            variant = cfg.with_overrides(params=v["params"], name=f"{cfg.name}-{v['name']}", sweep=[])
            jobs.append((variant.to_dict(), str(out_dir / v["name"]), cfg.verify))
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_run_variant, *zip(*jobs)))
        for name, code, msg in results:
            print(f"{name}: {'ok' if code == EXIT_OK else f'exit {code}'}: {msg}")
        return max(code for _, code, _ in results)
    try:
        summary = run_experiment(cfg, out_dir, cfg.verify)
    except InvalidExperiment as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, ProjectionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    y = np.asarray(summary["terminal"]["y"])
    print(f"{cfg.name}: {cfg.algorithm}, t = {summary['final_time']:g}, "
          f"wall time {summary['wall_time_s']:.2f} s")
    print("terminal y:", np.array2string(y.ravel() if y.shape[1] == 1 else y, precision=4))
    print(f"max KKT residual: {summary['kkt_max']:.3e}"
          f" ({'certified' if summary['certified'] else 'not certified'})")
    if "verify" in summary:
        v = summary["verify"]
        if v["max_abs_gap"] is None:
            print(f"verify: oracle not certified ({v['oracle_message']})")
        else:
            print(f"verify: max |y - y*| = {v['max_abs_gap']:.3e} "
                  f"({'within' if v['within_tolerance'] else 'outside'} {VERIFY_TOL:g})")
    print(f"wrote {out_dir / cfg.outputs['trajectory']} and {out_dir / cfg.outputs['summary']}")
    return EXIT_OK


def _cmd_check_params(cfg: ExperimentConfig, args):
    try:
        lines, ok = check_params_report(cfg)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_GAINS


def build_parser():
    parser = argparse.ArgumentParser(prog="distalloc", description="Distributed resource allocation simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="config file, or the name of a bundled config")
    common.add_argument("--dump-config", action="store_true",
                        help="print the normalized config (after overrides) and exit")
    common.add_argument("--step", type=float, help="integration step size h")
    common.add_argument("--horizon", type=float, help="simulated time T")
    common.add_argument("--seed", type=int, help="seed for the random initial state")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="simulate and write artifacts")
    run.add_argument("--verify", action="store_true", help="solve centrally and compare")
    run.add_argument("--out", help="output directory (overrides outputs.dir)")
    run.add_argument("--sweep", action="store_true", help="run the config's sweep variants concurrently")
    sub.add_parser("check-params", parents=[common], help="report spectral quantities and gain bounds")
    sub.add_parser("list-configs", help="list bundled configs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list-configs":
        print("\n".join(bundled_configs()))
        return EXIT_OK
    try:
        cfg = _apply_overrides(load_config(resolve_config(args.config)), args)
        # overrides must still describe a valid document
        cfg = ExperimentConfig.from_dict(cfg.to_dict(), args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as e:
        print(f"error: {args.config}: {e.strerror}", file=sys.stderr)
        return EXIT_PARSE
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    if args.command == "run":
        return _cmd_run(cfg, args)
    return _cmd_check_params(cfg, args)


if __name__ == "__main__":
    sys.exit(main())
