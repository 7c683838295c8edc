"""Command line entry point: ``ldplab {check,skeleton,simulate,rate,verify}``.

Every run writes, into its output directory, the resolved config
(``config.resolved.json``), the seed (``seed.txt``) and a manifest
(``manifest.json``) with the sha256 of every file produced.

Settings come from, in increasing priority: the config file, environment
variables ``LDPLAB_SEED``, ``LDPLAB_THREADS``, ``LDPLAB_OUT``, and flags.

Exit codes: 0 success, 1 verdict failure, 2 config error, 3 numerical
error, 4 resource cap exceeded.

CSV column orders:

* skeleton ``trajectory.csv``: t, x0, x1, ...
* simulate ``paths.csv``: path_id, sup_error, jump_count, censored_flag
* verify ``<experiment>_<series>.csv``: x, y, stderr
"""
import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .audits import audit_all
from .config import ENV_PREFIX, build_control, build_event, build_problem, load_config, rate_options, resolved
from .errors import ConfigurationError, LdpLabError
from .harness import run_dyadic_diagnostic, run_ldp1, run_ldp2, run_tail_trend
from .rate import minimize_rate
from .skeleton import solve_skeleton
from .spde import SimConfig, simulate_batch

EXPERIMENTS = ("ldp1", "ldp2", "dyadic", "tail")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, args, cfg, command):
        self.cfg = cfg
        self.command = command
        self.seed = args.seed
        self.fmt = args.format
        self.dir = args.out
        os.makedirs(self.dir, exist_ok=True)
        self.files = []

    def path(self, name):
        p = os.path.join(self.dir, name)
        self.files.append(p)
        return p

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)

    def finish(self):
        self.write_json("config.resolved.json", self.cfg)
        with open(self.path("seed.txt"), "w") as fh:
            fh.write(f"{self.seed}\n")
        manifest = {
            "command": self.command,
            "seed": self.seed,
            "version": __version__,
            "files": {os.path.basename(p): _sha256(p) for p in sorted(set(self.files))},
        }
        with open(os.path.join(self.dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


def _settings(args, cfg):
    run = cfg.get("run", {})
    env = os.environ
    if args.seed is None:
        args.seed = int(env[ENV_PREFIX + "SEED"]) if ENV_PREFIX + "SEED" in env else int(run.get("seed", 0))
    if args.threads is None:
        args.threads = int(env.get(ENV_PREFIX + "THREADS", os.cpu_count() or 1))
    if args.out is None:
        args.out = env.get(ENV_PREFIX + "OUT") or cfg.get("output", {}).get("directory") or os.path.join("out", args.command)
    if args.format is None:
        fmts = cfg.get("output", {}).get("formats", ["csv"])
        args.format = fmts[0]
    if args.seed < 0:
        raise ConfigurationError("seed must be nonnegative")


def _first_eps(run):
    eps = run.get("eps", 0.1)
    return eps[0] if isinstance(eps, list) else eps


def cmd_check(args, cfg, out):
    problem = build_problem(cfg)
    run = cfg.get("run", {})
    reports = audit_all(problem.drift, problem.noise, T=problem.T, n_samples=run.get("audit_samples", 10_000), seed=args.seed)
    for r in reports:
        print(r.line())
        if not r.passed:
            print(f"  witness: {json.dumps(r.witness)}")
    out.write_json("audit.json", [r.to_dict() for r in reports])
    return 0 if all(r.passed for r in reports) else 1


def _closed_form_scalar(problem, g, times):
    """Y for A = -a v, state-independent affine noise and a time-constant control."""
    drift, noise = problem.drift, problem.noise
    if drift.name != "scalar_linear" or noise.name != "affine" or noise.kappa != 0:
        raise ConfigurationError("scalar_linear oracle needs a scalar_linear drift and state-independent affine noise")
    if not np.all(g.values == g.values[0]):
        raise ConfigurationError("scalar_linear oracle needs a control constant in time")
    a = drift.a
    push = float(np.sum(problem.ms.nu_weights * noise.sigma * (g.values[0] - 1.0)))
    decay = np.exp(-a * times)[:, None]
    return decay * problem.x0 + (1.0 - decay) / a * push * noise.base


def cmd_skeleton(args, cfg, out):
    problem = build_problem(cfg)
    g = build_control(cfg, problem)
    run = cfg.get("run", {})
    res = solve_skeleton(problem, g, run.get("dt"), run.get("fp_tol"))
    traj = res.trajectory
    if out.fmt == "csv":
        traj.to_csv(out.path("trajectory.csv"))
    else:
        traj.to_json(out.path("trajectory.json"))
    diag = res.diagnostics()
    if run.get("oracle") == "scalar_linear":
        exact = _closed_form_scalar(problem, g, traj.time_grid)
        diag["oracle_max_error"] = float(np.max(np.abs(traj.states - exact)))
        print(f"max error vs closed form: {diag['oracle_max_error']:.3e}")
    out.write_json("diagnostics.json", diag)
    print(f"windows {len(res.windows)}, max iterations {res.max_iterations}, max ratio {res.max_ratio:.3f}, energy {res.energy:.6g}")
    return 0


def cmd_simulate(args, cfg, out):
    problem = build_problem(cfg)
    psi = build_control(cfg, problem, required=False)
    run = cfg.get("run", {})
    cap = run.get("cap")
    kw = {"cap": cap} if cap else {}
    sim = SimConfig(problem, _first_eps(run), psi, run.get("dt"), seed=args.seed, **kw)
    Y = solve_skeleton(problem, sim.control, sim.dt, run.get("fp_tol")).trajectory
    batch = simulate_batch(sim, run.get("paths", 100), skeleton=Y)
    if out.fmt == "csv":
        batch.to_csv(out.path("paths.csv"))
    summary = batch.summary()
    out.write_json("aggregate.json", summary)
    print(json.dumps({k: summary[k] for k in ("n_paths", "censored", "mean_jump_count", "mean_sup_error_sq") if k in summary}))
    return 0


def cmd_rate(args, cfg, out):
    problem = build_problem(cfg)
    event = build_event(cfg)
    run = cfg.get("run", {})
    est = minimize_rate(problem, event, rate_options(cfg), N_cap=run.get("rate_cap"))
    out.write_json("rate.json", est.to_dict(problem.ms))
    print(f"rate {est.value if math.isfinite(est.value) else 'inf'}  feasible={est.feasible}  residual={est.constraint_residual:.3e}")
    return 0


def cmd_verify(args, cfg, out):
    problem = build_problem(cfg)
    run = cfg.get("run", {})
    psi = build_control(cfg, problem)
    which = EXPERIMENTS if args.which == "all" else (args.which,)
    dt = run.get("dt")
    code = 0
    for name in which:
        if name == "ldp1":
            rep = run_ldp1(problem, psi, run.get("n_list", (2, 4, 8, 16, 32, 64)), N=run.get("N", 3.0))
        elif name == "ldp2":
            eps = run.get("eps", [2.0 ** -k for k in range(3, 9)])
            eps = eps if isinstance(eps, list) else [eps]
            rep = run_ldp2(problem, psi, eps, run.get("paths", 500), dt=dt, seed=args.seed, delta=run.get("delta", 0.1))
        elif name == "dyadic":
            rep = run_dyadic_diagnostic(problem, psi, m_list=run.get("m_list", range(3, 10)))
        else:
            event = build_event(cfg)
            rep = run_tail_trend(
                problem, event, run.get("tail_eps", (0.4, 0.2, 0.1)), run.get("tail_paths", 10_000),
                run.get("rate_cap"), dt=dt, seed=args.seed, rate_opts=rate_options(cfg),
            )
        rep.to_json(out.path(f"{name}_report.json"))
        if out.fmt == "csv":
            out.files.extend(rep.write_series(out.dir))
        print(f"{name:8s} {rep.status.upper():12s} ({rep.runtime:.1f} s)")
        if rep.status == "fail":
            code = 1
    return code


COMMANDS = {
    "check": cmd_check,
    "skeleton": cmd_skeleton,
    "simulate": cmd_simulate,
    "rate": cmd_rate,
    "verify": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ldplab", description="Large-deviation experiments for jump SPDEs.")
    parser.add_argument("--version", action="version", version=f"ldplab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="config file, or the name of a bundled config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="worker count (recorded; runs are vectorized in-process)")
        p.add_argument("--format", choices=("csv", "json"), help="format for tabular outputs")
        if name == "verify":
            p.add_argument("which", choices=EXPERIMENTS + ("all",))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        _settings(args, cfg)
        cfg = resolved(cfg, seed=args.seed)
        out = _Run(args, cfg, args.command)
        code = COMMANDS[args.command](args, cfg, out)
        out.finish()
        return code
    except LdpLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"diagnostics: {json.dumps(diag, default=str)}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
