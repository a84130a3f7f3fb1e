"""Command-line interface: ``mdplab {check,simulate,skeleton,rate,experiment}``.

Exit codes: 0 on success, 2 when a pass criterion fails, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfg
from .errors import MdpLabError
from .experiments import run_lln, run_mdp1, run_mdp2, run_tail
from .model import verify_assumptions
from .noise import DeviationScale
from .rate import endpoint_rate, optimal_tilt
from .reports import register, write_report
from .solvers import evolve_deterministic, evolve_stochastic, solve_skeleton
from .streams import stream

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override seed.master")
    common.add_argument("--out", help="override output.directory")
    common.add_argument("--quiet", action="store_true", help="suppress stdout output")

    p = _Parser(prog="mdplab", description="Moderate-deviation experiments for SPDEs with jumps")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("check", parents=[common], help="verify structural assumptions of the model")
    sim = sub.add_parser("simulate", parents=[common], help="simulate u0 or u^eps, write CSV")
    sim.add_argument("--epsilon", type=float,
                     help="noise intensity (omit for the deterministic equation)")
    sub.add_parser("skeleton", parents=[common], help="solve the skeleton equation, write CSV")
    rate = sub.add_parser("rate", parents=[common], help="endpoint rate I_T(x)")
    rate.add_argument("--target", help="comma-separated state x (default: experiment.target)")
    sub.add_parser("experiment", parents=[common], help="run the configured experiment")
    return p


def _load(args) -> cfg.RunConfig:
    conf = cfg.parse_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = conf.seed.model_copy(update={"master": args.seed})
    if args.out is not None:
        updates["output"] = conf.output.model_copy(update={"directory": args.out})
    return conf.model_copy(update=updates) if updates else conf


def _emit(args, payload):
    if not args.quiet:
        print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_check(args, conf) -> int:
    model = cfg.build_model(conf)
    report = verify_assumptions(model, n_samples=conf.experiment.n_samples,
                                rng_seed=conf.seed.master)
    _emit(args, {"run_id": conf.run_id, **report.to_dict()})
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_simulate(args, conf) -> int:
    model = cfg.build_model(conf)
    u0 = cfg.build_u0(conf, model)
    grid = cfg.build_grid(conf)
    if args.epsilon is None:
        traj = evolve_deterministic(model, u0, grid)
    else:
        space, g = cfg.build_noise(conf, model)
        scale = (DeviationScale(args.epsilon, float(np.sqrt(args.epsilon)))
                 if conf.scale.mode == "clt" else DeviationScale.power(args.epsilon, conf.scale.gamma))
        traj = evolve_stochastic(model, g, space, scale, u0, grid,
                                 stream(conf.seed.master, 0, "simulate"),
                                 eps_ceiling=conf.scale.eps_ceiling)
    out = Path(conf.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"trajectory-{conf.run_id}.csv"
    traj.to_csv(path, conf.run_id)
    register(out, conf.run_id, [path])
    _emit(args, {"run_id": conf.run_id, "path": str(path), "nodes": int(traj.times.size),
                 "jumps": int(traj.jump_flags.sum()), "sup_h": traj.sup_h(),
                 "energy_defect": traj.meta.get("energy_defect")})
    return EXIT_OK


def _base(conf):
    model = cfg.build_model(conf)
    space, g = cfg.build_noise(conf, model)
    grid = cfg.build_grid(conf)
    u0_path = evolve_deterministic(model, cfg.build_u0(conf, model), grid)
    return model, space, g, grid, u0_path


def cmd_skeleton(args, conf) -> int:
    model, space, g, grid, u0_path = _base(conf)
    traj = solve_skeleton(model, g, space, cfg.build_phi(conf, grid, space), u0_path, grid)
    out = Path(conf.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"skeleton-{conf.run_id}.csv"
    traj.to_csv(path, conf.run_id)
    register(out, conf.run_id, [path])
    _emit(args, {"run_id": conf.run_id, "path": str(path), "Y_T": traj.states[-1].tolist(),
                 "path_norm": traj.path_norm(model.a_eigenvalues)})
    return EXIT_OK


def cmd_rate(args, conf) -> int:
    model, space, g, grid, u0_path = _base(conf)
    if args.target is not None:
        x = np.array([float(v) for v in args.target.split(",")])
    elif conf.experiment.target is not None:
        x = np.asarray(conf.experiment.target, dtype=float)
    else:
        raise MdpLabError("no target: pass --target or set experiment.target")
    res = endpoint_rate(model, g, space, u0_path, x, grid)
    clip = None
    if res.reachable:
        eps = conf.scale.epsilon[-1]
        scale = DeviationScale.power(eps, conf.scale.gamma)
        clip = optimal_tilt(res.phi_star, scale, conf.experiment.tilt_bound).clipping_fraction
    _emit(args, {"run_id": conf.run_id, "target": x.tolist(), "rate": res.rate,
                 "cg_iterations": res.cg_iterations, "residual": res.residual,
                 "clipping_fraction": clip, "reachable": res.reachable})
    return EXIT_OK


def run_configured(conf: cfg.RunConfig):
    """Build and run the experiment named in the config; returns its report."""
    ex = cfg.build_experiment(conf)
    spec = conf.experiment
    t0 = time.perf_counter()
    if spec.name == "lln":
        report = run_lln(ex)
    elif spec.name == "mdp1":
        grid = ex.grid
        report = run_mdp1(ex, cfg.build_phi(conf, grid, ex.space), tuple(spec.freqs),
                          None if spec.rho is None else np.asarray(spec.rho))
    elif spec.name == "mdp2":
        report = run_mdp2(ex, cfg.build_phi(conf, ex.grid, ex.space), spec.tilt_bound, spec.beta)
    else:
        if ex.target is None:
            raise MdpLabError("the tail experiment needs experiment.target")
        report = run_tail(ex)
    report.wall_clock = time.perf_counter() - t0
    return report


def cmd_experiment(args, conf) -> int:
    report = run_configured(conf)
    paths = write_report(report, conf.output.directory, conf.run_id, conf.output.formats)
    register(conf.output.directory, conf.run_id, paths, report.wall_clock)
    _emit(args, {"run_id": conf.run_id, "experiment": report.name, "passed": report.passed,
                 "criteria": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                              for c in report.criteria],
                 "artifacts": [str(p) for p in paths]})
    if not report.passed and args.quiet:
        for c in report.failed():
            print(f"criterion {c.name} failed: {c.detail}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "skeleton": cmd_skeleton,
            "rate": cmd_rate, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        conf = _load(args)
        return COMMANDS[args.command](args, conf)
    except MdpLabError as e:
        print(f"mdplab: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as e:
        print(f"mdplab: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
