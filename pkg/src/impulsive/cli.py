"""Command-line harness.

``impulsive <command> <system> [flags]`` where ``<system>`` is a builtin
name (S1a, S1b, S2, S3) or a path to a JSON config. Every command writes
JSON reports (and CSV where it makes sense) into the output directory,
plus a ``manifest_<command>_<hash>_s<seed>.json`` describing the run. Output directory: ``--out``,
else ``$IMPULSIVE_OUTPUT_DIR``, else ``./impulsive-out``.

Exit codes: 0 success, 2 validation or config failure, 3 numerical
failure, 4 budget exhausted.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .builtins import BUILTIN_SYSTEMS, builtin_system
from .config import SCHEMA_VERSION, SystemConfig, emit_config, load_config
from .errors import BudgetExhausted, ConfigError, ImpulsiveError, InvalidSystem, NoReturn

__all__ = ["ExperimentResult", "run", "main", "EXIT_OK", "EXIT_INVALID", "EXIT_NUMERICAL", "EXIT_BUDGET", "OUTPUT_ENV"]

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_BUDGET = 0, 2, 3, 4
OUTPUT_ENV = "IMPULSIVE_OUTPUT_DIR"
SEED_SCHEME = "numpy.random.SeedSequence(seed).spawn(n); child i drives trial/iteration i"


@dataclass
class ExperimentResult:
    command: str
    config_hash: str
    seed: int
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    checks: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK
    error: str | None = None
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "seed_scheme": SEED_SCHEME,
            "outputs": self.outputs,
            "wall_time": self.wall_time,
            "checks": self.checks,
            "exit_code": self.exit_code,
            "error": self.error,
            "summary": self.summary,
        }


def _point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _clean(obj):
    """JSON-ready copy: numpy to python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


class _Writer:
    def __init__(self, out: Path, cfg_hash: str, seed: int, command: str):
        self.out, self.hash, self.seed, self.command = out, cfg_hash, seed, command
        self.paths: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, stem: str, ext: str) -> Path:
        p = self.out / f"{stem}_{self.hash}_s{self.seed}.{ext}"
        self.paths.append(str(p))
        return p

    def json(self, stem: str, payload: dict) -> Path:
        body = {"schema_version": SCHEMA_VERSION, "command": self.command, "config_hash": self.hash, "seed": self.seed}
        body.update(_clean(payload))
        p = self.path(stem, "json")
        p.write_text(json.dumps(body, indent=2) + "\n")
        return p

    def config(self, stem: str, system) -> Path:
        p = self.path(stem, "json")
        p.write_text(emit_config(system, self.seed))
        return p


def _load_system(spec: str, seed: int) -> SystemConfig:
    if spec in BUILTIN_SYSTEMS:
        return SystemConfig(builtin_system(spec), 0 if seed is None else seed)
    if not Path(spec).exists():
        raise ConfigError(f"{spec!r} is neither a builtin system ({', '.join(BUILTIN_SYSTEMS)}) nor a config file")
    cfg = load_config(spec)
    return SystemConfig(cfg.system, cfg.seed if seed is None else seed)


def _orbit(system, x0, k):
    from .poincare import find_periodic_orbit

    return find_periodic_orbit(system, x0, k)


# -- commands ---------------------------------------------------------------------------
def cmd_validate(system, args, w):
    from .system import validate_system

    rep = validate_system(system)
    w.json("validation", rep.to_dict())
    checks = {c.name: bool(c.passed) for c in rep.checks}
    if not rep.passed:
        err = InvalidSystem("failed checks: " + ", ".join(k for k, v in checks.items() if not v))
        err.checks = checks
        raise err
    return checks, {"passed": rep.passed}


def cmd_simulate(system, args, w):
    from .semiflow import impulsive_trajectory

    tr = impulsive_trajectory(system, args.x0, args.t)
    tr.to_csv(w.path("trajectory", "csv"), dt=args.dt)
    ev = [e.to_dict() for e in tr.events]
    w.json("events", {"x0": args.x0, "t": args.t, "impulsive_times": tr.times, "events": ev, "warnings": tr.warnings})
    return {}, {"impulsive_times": tr.times}


def cmd_hit(system, args, w):
    from .integrate import first_hitting_time

    sec = system.D if args.section == "D" else system.D_hat
    tol = system.tolerances
    t_max = system.horizon if args.t_max is None else args.t_max
    try:
        h = first_hitting_time(system.field, system.space, args.x0, sec, t_max, tol.integration, tol.event, tol.max_step)
    except NoReturn:
        h = None
    if h is None:
        out = {"hit": False, "t_max": t_max}
    else:
        out = {
            "hit": True,
            "time": h.time,
            "point": h.point,
            "transversality": h.transversality,
            "interior": h.interior,
        }
    w.json("hit", out)
    return {}, out


def cmd_poincare(system, args, w):
    from .poincare import poincare_hat

    out = {}
    if args.k is None:
        y = poincare_hat(system, args.x0)
        out = {"x0": args.x0, "image": y}
    else:
        orb = _orbit(system, args.x0, args.k)
        out = {"orbit": orb.to_dict()}
    w.json("poincare", out)
    return {}, out


def cmd_orbits(system, args, w):
    from .poincare import periodic_orbits_up_to

    orbs = periodic_orbits_up_to(system, args.t_bound, grid_resolution=args.grid)
    out = {"t_bound": args.t_bound, "grid": args.grid, "orbits": [o.to_dict() for o in orbs]}
    w.json("orbits", out)
    return {}, {"count": len(orbs)}


def cmd_index(system, args, w):
    from .index import index_of_orbit

    orb = _orbit(system, args.x0, args.k)
    idx = index_of_orbit(system, orb, args.radius)
    w.json("index", {"orbit": orb.to_dict(), "radius": args.radius, "index": idx})
    return {}, {"index": idx}


def cmd_close(system, args, w):
    from .perturbation import closing_field, closing_impulse

    if args.mode == "impulse":
        res = closing_impulse(system, args.target, args.eps, seed=w.seed)
    else:
        res = closing_field(system, args.target, args.eps, seed=w.seed)
    out = {"record": res.record.to_dict(), "orbit": res.orbit.to_dict(), "n": res.n, "distance": res.distance}
    w.json("closing", out)
    w.config("system", res.system)
    checks = {"c0_below_eps": res.record.c0_size < args.eps, "orbit_within_eps": res.distance < args.eps}
    return checks, {"c0_size": res.record.c0_size, "period": res.orbit.period}


def _attract(system, orb, mode, eta, seed):
    from .perturbation import attractify, attractify_impulse

    if mode == "impulse":
        return attractify_impulse(system, orb, eta, seed=seed)
    return attractify(system, orb, eta, seed=seed)


def cmd_attract(system, args, w):
    from .index import index_of_orbit

    orb = _orbit(system, args.x0, args.k)
    new, rec, orb2, ratio = _attract(system, orb, args.mode, args.eta, w.seed)
    out = {"record": rec.to_dict(), "orbit": orb2.to_dict(), "ratio": ratio, "index": orb2.index}
    if orb2.index is None and system.space.dimension == 3:
        out["index"] = index_of_orbit(new, orb2, 0.25 * rec.support.get("radius", rec.support.get("ball", 0.1)))
    w.json("attract", out)
    w.config("system", new)
    return {"contracting": ratio < 1.0, "c0_within_bound": rec.c0_size <= rec.bound * (1 + 1e-9)}, {"ratio": ratio}


def cmd_permanence(system, args, w):
    from .perturbation import permanence_delta, permanence_test, radial_damping_term

    orb = _orbit(system, args.x0, args.k)
    out = {}
    if args.radial_damping is not None:
        rep = permanence_test(
            system,
            orb,
            args.radial_damping,
            1,
            "field",
            seed=w.seed,
            survival_radius=0.5 if args.survival_radius is None else args.survival_radius,
            trial_fields=[radial_damping_term(args.radial_damping)],
        )
    else:
        if args.attract_eta is not None:
            system, rec, orb, ratio = _attract(system, orb, args.mode, args.attract_eta, w.seed)
            delta, radius, amp = permanence_delta(system, orb, rec, ratio)
            out.update({"ratio": ratio, "margin_radius": radius, "amplification": amp})
            w.config("system", system)
        else:
            delta = args.delta
        if args.delta is not None:
            delta = args.delta
        if delta is None:
            raise ConfigError("permanence needs --delta or --attract-eta")
        rep = permanence_test(system, orb, delta, args.trials, args.mode, seed=w.seed, survival_radius=args.survival_radius)
    out["report"] = rep.to_dict()
    w.json("permanence", out)
    return {"all_survived": rep.survivals == rep.trials}, {"survivals": rep.survivals, "trials": rep.trials}


def _region(system, args):
    from .analysis import Region, default_region

    if args.region is None:
        return default_region(system, args.eps_grid)
    return Region.from_dict(json.loads(Path(args.region).read_text()))


def cmd_proxy(system, args, w):
    from .analysis import recurrent_proxy

    px = recurrent_proxy(system, _region(system, args), args.eps_grid, args.t_min, args.t_max, args.samples, w.seed)
    px.to_csv(w.path("proxy", "csv"))
    w.json("proxy", px.to_dict())
    return {}, {"active": int(len(px.active))}


def cmd_densify(system, args, w):
    from .analysis import densify

    region = None if args.region is None else _region(system, args)
    try:
        new, rep, _ = densify(system, args.mode, args.eps, args.budget, seed=w.seed, region=region)
    except BudgetExhausted as exc:
        w.json("density_report", exc.report.to_dict())
        raise
    w.json("density_report", rep.to_dict())
    w.config("system", new)
    checks = {"gap_within_eps": rep.final_gap <= args.eps, "trace_non_increasing": bool(np.all(np.diff(rep.gap_trace) <= 0))}
    return checks, {"final_gap": rep.final_gap, "total_perturbation": rep.total_perturbation, "iterations": rep.iterations}


def cmd_shadow(system, args, w):
    from .shadowing import pseudo_orbit_eval, shadowing_falsifier, sphere_chain, true_orbit_chain  # noqa: F401

    if args.true_chain is not None:
        chain = true_orbit_chain(system, args.true_chain, [args.link_time] * args.links, args.delta)
    else:
        chain = sphere_chain(system, args.delta)
    v = shadowing_falsifier(system, chain, args.eps, init_grid=args.candidates, rep_slack_points=args.breakpoints, seed=w.seed)
    w.json("shadow", {"chain": chain.to_dict(), "eps": args.eps, "result": v.to_dict()})
    return {}, {"verdict": v.verdict, "best_distance": v.best_distance}


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "hit": cmd_hit,
    "poincare": cmd_poincare,
    "orbits": cmd_orbits,
    "index": cmd_index,
    "close": cmd_close,
    "attract": cmd_attract,
    "permanence": cmd_permanence,
    "proxy": cmd_proxy,
    "densify": cmd_densify,
    "shadow": cmd_shadow,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impulsive", description="Impulsive semiflow experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("system", help="builtin name (S1a, S1b, S2, S3) or path to a JSON config")
        p.add_argument("--seed", type=int, default=None, help="master seed (default: config seed or 0)")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./impulsive-out)")
        return p

    add("validate", "check the standing hypotheses")
    p = add("simulate", "export an impulsive trajectory as CSV")
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--dt", type=float, default=None, help="uniform sampling step (default: integrator steps)")
    p = add("hit", "first hitting time of a section")
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--section", choices=("D", "D_hat"), default="D")
    p.add_argument("--t-max", type=float, default=None)
    p = add("poincare", "evaluate the Poincare map, or find a periodic orbit with --k")
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--k", type=int, default=None)
    p = add("orbits", "scan for periodic orbits of period at most t")
    p.add_argument("--t-bound", type=float, required=True)
    p.add_argument("--grid", type=int, default=10)
    p = add("index", "fixed-point index of a periodic orbit")
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--radius", type=float, default=0.05)
    p = add("close", "close a recurrent point into a periodic orbit")
    p.add_argument("--mode", choices=("impulse", "field"), required=True)
    p.add_argument("--target", type=_point, required=True)
    p.add_argument("--eps", type=float, required=True)
    p = add("attract", "make a periodic orbit attracting")
    p.add_argument("--mode", choices=("impulse", "field"), required=True)
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--eta", type=float, required=True)
    p = add("permanence", "random-perturbation survival test")
    p.add_argument("--mode", choices=("impulse", "field"), default="impulse")
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--attract-eta", type=float, default=None, help="attractify first; delta defaults to 0.1 * margin")
    p.add_argument("--radial-damping", type=float, default=None, help="single trial adding -rate*(x, y, 0)")
    p.add_argument("--survival-radius", type=float, default=None)
    for name, help in (("proxy", "recurrent-set proxy on a grid"), ("densify", "close and attract until dense")):
        p = add(name, help)
        p.add_argument("--region", default=None, help="JSON file with lower/upper/annulus")
        if name == "proxy":
            p.add_argument("--eps-grid", type=float, default=0.05)
            p.add_argument("--t-min", type=float, default=1.0)
            p.add_argument("--t-max", type=float, default=20.0)
            p.add_argument("--samples", type=int, default=1)
        else:
            p.add_argument("--mode", choices=("impulse", "field"), required=True)
            p.add_argument("--eps", type=float, required=True)
            p.add_argument("--budget", type=int, default=25)
    p = add("shadow", "search for an orbit shadowing a pseudo-orbit")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--paper-chain", action="store_true", help="two-link chain stepping over D (default)")
    g.add_argument("--true-chain", type=_point, default=None, help="chain cut from the orbit of this point")
    p.add_argument("--links", type=int, default=3)
    p.add_argument("--link-time", type=float, default=1.5)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--candidates", type=int, default=10000)
    p.add_argument("--breakpoints", type=int, default=8)
    return ap


def run(argv=None) -> ExperimentResult:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "impulsive-out")
    result = ExperimentResult(args.command, "", 0)
    try:
        cfg = _load_system(args.system, args.seed)
        seed = int(cfg.seed)
        result.config_hash, result.seed = cfg.hash, seed
        w = _Writer(out, cfg.hash, seed, args.command)
        result.outputs = w.paths
        if args.command != "validate":
            cfg.system.require_valid()
        result.checks, result.summary = COMMANDS[args.command](cfg.system, args, w)
    except BudgetExhausted as exc:
        result.exit_code, result.error = EXIT_BUDGET, str(exc)
    except (ConfigError, InvalidSystem) as exc:
        result.exit_code, result.error = EXIT_INVALID, f"{type(exc).__name__}: {exc}"
        result.checks = getattr(exc, "checks", {})
    except (ImpulsiveError, ArithmeticError, np.linalg.LinAlgError) as exc:
        result.exit_code, result.error = EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}"
    except (ValueError, OSError) as exc:
        result.exit_code, result.error = EXIT_INVALID, f"{type(exc).__name__}: {exc}"
    result.wall_time = time.perf_counter() - t0
    result.summary = _clean(result.summary)
    out.mkdir(parents=True, exist_ok=True)
    name = f"manifest_{result.command}_{result.config_hash or 'nohash'}_s{result.seed}.json"
    (out / name).write_text(json.dumps(_clean(result.to_dict()), indent=2) + "\n")
    return result


def main(argv=None) -> int:
    res = run(argv)
    status = "ok" if res.exit_code == 0 else f"error (exit {res.exit_code}): {res.error}"
    print(f"{res.command}: {status}")
    for k, v in res.summary.items():
        print(f"  {k}: {v}")
    for k, v in res.checks.items():
        print(f"  check {k}: {'pass' if v else 'FAIL'}")
    for p in res.outputs:
        print(f"  wrote {p}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
