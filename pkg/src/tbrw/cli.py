"""Command-line surface: simulation, figure data, verifiers, experiments.

Every command resolves its configuration (flags over config file over
defaults), runs, writes outputs atomically, and drops a manifest JSON
recording the resolved config, seed, and a sha256 digest per output
file.  Rerunning a command with the config echoed in a manifest
reproduces the same bytes.

Exit codes: 0 success / all checks hold; 1 a verification check
failed; 2 usage error; 3 capacity or undersampling.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from fractions import Fraction
from math import comb

from . import __version__, exact
from .errors import CapacityError, DegenerateLawError, TbrwError, UndersampledError, UsageError
from .mc import (
    ExperimentConfig,
    atomic_write_text,
    estimate_escape,
    run_K_and_M,
    run_concentration,
    run_speed_curve,
    run_tau_tail,
    write_concentration_csv,
    write_k_hist_csv,
    write_speed_curve_csv,
    write_tau_tail_csv,
)
from .model import LeafLaw, Retention, export_tree, simulate
from .renewal import CensorPolicy

FIGURE_P_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
GALLERY_P = (0.1, 0.5, 0.9)
DEFAULT_SEED = 20_240_601


# --- law and config parsing -------------------------------------------------


def parse_pmf(text: str) -> LeafLaw:
    """``"0:0.5,2:0.5"`` -> LeafLaw with that support."""
    pmf: dict[int, Fraction] = {}
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            k_str, p_str = token.split(":")
            k = int(k_str)
            prob = Fraction(p_str)
        except (ValueError, ZeroDivisionError):
            raise UsageError(f"bad pmf token {token!r}: expected count:probability")
        if k in pmf:
            raise UsageError(f"bad pmf token {token!r}: count {k} repeated")
        pmf[k] = prob
    if not pmf:
        raise UsageError(f"empty pmf string {text!r}")
    return LeafLaw.from_pmf(pmf)


def resolve_law(args, *, allow_degenerate: bool) -> LeafLaw:
    if args.q is not None and args.p is not None:
        raise UsageError("give either --p or --q, not both")
    if args.q is not None:
        law = parse_pmf(args.q)
        if law.is_degenerate and not allow_degenerate:
            raise DegenerateLawError("law adds no leaves (kappa = 0); experiment undefined")
        return law
    p = args.p if args.p is not None else 0.5
    if p == 0:
        raise UsageError("--p 0 is degenerate; spell it out with --q '0:1' if intended")
    if not 0 < p <= 1:
        raise UsageError(f"--p must lie in (0, 1], got {p}")
    return LeafLaw.bernoulli(p)


def read_config_file(path: str) -> dict[str, str]:
    """key=value lines; a manifest JSON is accepted and its config reused."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return {str(k): str(v) for k, v in json.loads(text).get("config", {}).items()}
    out: dict[str, str] = {}
    for i, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


_CONFIG_KEYS = {
    "p": float,
    "q": str,
    "steps": int,
    "seed": int,
    "replicas": int,
    "retention": str,
    "out_dir": str,
    "depth_margin": int,
    "horizon_margin": int,
}


def apply_config_file(args: argparse.Namespace) -> None:
    """Fill unset flags from the config file; flags win."""
    if getattr(args, "config", None) is None:
        return
    values = read_config_file(args.config)
    for key, value in values.items():
        if key not in _CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r} in {args.config}")
        if getattr(args, key, None) is None:
            setattr(args, key, _CONFIG_KEYS[key](value))


# --- manifest ---------------------------------------------------------------


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir: str, command: str, config: dict, seed: int, outputs: list[str], started: float) -> str:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "outputs": [
            {"path": os.path.basename(p), "sha256": sha256_file(p)} for p in sorted(outputs)
        ],
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    path = os.path.join(out_dir, f"manifest_{command.replace(' ', '_')}.json")
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def check_manifest(path: str) -> bool:
    """Recompute output digests against a manifest's records."""
    with open(path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    for entry in manifest["outputs"]:
        target = os.path.join(base, entry["path"])
        if not os.path.exists(target) or sha256_file(target) != entry["sha256"]:
            return False
    return True


def _ensure_out_dir(args) -> str:
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _policy(args) -> CensorPolicy:
    kw = {}
    if getattr(args, "depth_margin", None) is not None:
        kw["depth_margin"] = args.depth_margin
    if getattr(args, "horizon_margin", None) is not None:
        kw["horizon_margin"] = args.horizon_margin
    return CensorPolicy(**kw)


# --- commands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    apply_config_file(args)
    law = resolve_law(args, allow_degenerate=True)
    steps = args.steps if args.steps is not None else 2000
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    retention = Retention.FULL if (args.retention or "summary") == "full" else Retention.SUMMARY
    started = time.perf_counter()
    traj = simulate(law, steps, master_seed=seed, replica_index=args.replica, retention=retention)
    out_dir = _ensure_out_dir(args)
    payload = {
        "law": law.describe(),
        "steps": steps,
        "master_seed": seed,
        "replica_index": args.replica,
        "retention": retention.name.lower(),
        "depth": traj.depth.tolist(),
        "walker_degree": traj.walker_degree.tolist(),
        "height": traj.height.tolist(),
        "vertex_count": traj.vertex_count.tolist(),
        "leaves_added": traj.leaves_added.tolist(),
        "final_tree": traj.final_tree.to_parent_list(),
    }
    if retention is Retention.FULL:
        payload["position"] = traj.position.tolist()
    out = os.path.join(out_dir, "trajectory.json")
    atomic_write_text(out, json.dumps(payload, sort_keys=True) + "\n")
    config = {
        "q" if args.q else "p": args.q or str(float(law.probs[1]) if len(law.probs) > 1 else 0.0),
        "steps": str(steps),
        "seed": str(seed),
        "retention": retention.name.lower(),
    }
    write_run_manifest(out_dir, "simulate", config, seed, [out], started)
    print(f"wrote {out} ({steps} steps, final depth {int(traj.depth[-1])})")
    return 0


def cmd_figures(args) -> int:
    apply_config_file(args)
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    out_dir = _ensure_out_dir(args)
    started = time.perf_counter()
    outputs: list[str] = []
    if args.figure == "tree-gallery":
        for i, p in enumerate(GALLERY_P):
            steps = int(99 / p)
            traj = simulate(
                LeafLaw.bernoulli(p), steps, master_seed=seed, replica_index=i
            )
            path = os.path.join(out_dir, f"tree_p{p}.dot")
            atomic_write_text(path, export_tree(traj.final_tree, fmt="dot"))
            outputs.append(path)
            print(f"{path}: {steps} steps, {traj.final_tree.n_vertices} vertices")
        config = {"seed": str(seed)}
    else:  # speed-curve
        replicas = args.replicas if args.replicas is not None else 100
        steps = args.steps if args.steps is not None else 2000
        cfg = ExperimentConfig.bernoulli_grid(
            FIGURE_P_GRID, horizon=steps, replicas=replicas, master_seed=seed
        )
        result = run_speed_curve(cfg)
        path = os.path.join(out_dir, "speed_curve.csv")
        write_speed_curve_csv(result, path)
        outputs.append(path)
        print(f"{path}: {len(result.points)} grid points, {replicas} x {steps}")
        config = {"seed": str(seed), "replicas": str(replicas), "steps": str(steps)}
    write_run_manifest(out_dir, f"figures {args.figure}", config, seed, outputs, started)
    return 0


def _verify_an_bound(args) -> dict:
    p = args.p if args.p is not None else 0.5
    r = args.r if args.r is not None else p / 5
    n_max = args.n if args.n is not None else 8
    if not 0 < p <= 1:
        raise UsageError(f"--p must lie in (0, 1], got {p}")
    if r <= 0 or r >= p:
        raise UsageError(f"--r must satisfy 0 < r < p, got r={r} p={p}")
    probe = exact.ComplexProbe.circles(p, r)
    reports = []
    for n in range(1, n_max + 1):
        poly = exact.enumerate_event(exact.root_arrival(n))
        rep = exact.verify_An_bound(poly, probe)
        reports.append(
            {
                "n": n,
                "radius": float(probe.radius),
                "holds": rep.holds,
                "max_ratio": rep.max_ratio,
                "vacuous": rep.vacuous,
            }
        )
    return {
        "check": "an-bound",
        "p": p,
        "r": r,
        "n_max": n_max,
        "holds": all(r["holds"] for r in reports),
        "probes": reports,
    }


def _verify_ho_series(args) -> dict:
    p = args.p if args.p is not None else 0.5
    n_max = args.n if args.n is not None else 9
    if not 0 < p <= 1:
        raise UsageError(f"--p must lie in (0, 1], got {p}")
    terms = exact.ho_series_terms(n_max)
    pf = Fraction(p).limit_denominator(10**9)
    values = [t.evaluate(pf) for t in terms]
    partials = []
    acc = Fraction(0)
    for v in values:
        acc += v
        partials.append(acc)
    monotone = all(b >= a for a, b in zip(partials, partials[1:]))
    bounded = all(0 <= s <= 1 for s in partials)
    return {
        "check": "ho-series",
        "p": p,
        "n_max": n_max,
        "holds": monotone and bounded,
        "partial_sums": [float(s) for s in partials],
        "total": float(partials[-1]) if partials else 0.0,
    }


def _verify_normalization(args) -> dict:
    n_max = args.n if args.n is not None else 10
    results = []
    for n in range(1, n_max + 1):
        poly = exact.enumerate_event(exact.whole_space(n))
        # identically one <=> coefficients are binomial
        ok = all(poly.coeffs[i] == comb(n, i) for i in range(n + 1))
        results.append({"n": n, "holds": ok, "atoms": poly.n_atoms})
    return {
        "check": "normalization",
        "n_max": n_max,
        "holds": all(r["holds"] for r in results),
        "per_horizon": results,
    }


def _verify_cross_validate(args) -> dict:
    p = args.p if args.p is not None else 0.5
    n = args.n if args.n is not None else 1
    replicas = args.replicas if args.replicas is not None else 100_000
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    if not 0 < p <= 1:
        raise UsageError(f"--p must lie in (0, 1], got {p}")
    event = exact.root_arrival(n)
    report = exact.cross_validate(event, p, replicas, seed)
    return {
        "check": "cross-validate",
        "p": p,
        "n": n,
        "replicas": replicas,
        "seed": seed,
        "holds": report.within,
        "exact": report.exact_value,
        "empirical": report.frequency,
        "sigma": report.sigma,
    }


def cmd_verify(args) -> int:
    apply_config_file(args)
    runner = {
        "an-bound": _verify_an_bound,
        "ho-series": _verify_ho_series,
        "normalization": _verify_normalization,
        "cross-validate": _verify_cross_validate,
    }[args.check]
    started = time.perf_counter()
    report = runner(args)
    out_dir = _ensure_out_dir(args)
    out = os.path.join(out_dir, f"verify_{args.check}.json")
    atomic_write_text(out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    config = {k: str(v) for k, v in report.items() if k in ("p", "r", "n", "n_max", "replicas")}
    write_run_manifest(out_dir, f"verify {args.check}", config, seed, [out], started)
    print(f"{args.check}: {'holds' if report['holds'] else 'FAILED'} ({out})")
    return 0 if report["holds"] else 1


def _experiment_config(args, law: LeafLaw) -> ExperimentConfig:
    return ExperimentConfig(
        laws=(law,),
        horizon=args.steps if args.steps is not None else 5000,
        replicas=args.replicas if args.replicas is not None else 10_000,
        master_seed=args.seed if args.seed is not None else DEFAULT_SEED,
        policy=_policy(args),
    )


def cmd_experiments(args) -> int:
    apply_config_file(args)
    law = resolve_law(args, allow_degenerate=True)
    started = time.perf_counter()
    out_dir = _ensure_out_dir(args)
    outputs: list[str] = []

    if args.which == "speed":
        grid_cfg = ExperimentConfig.bernoulli_grid(
            FIGURE_P_GRID,
            horizon=args.steps if args.steps is not None else 2000,
            replicas=args.replicas if args.replicas is not None else 100,
            master_seed=args.seed if args.seed is not None else DEFAULT_SEED,
            policy=_policy(args),
        )
        result = run_speed_curve(grid_cfg)
        path = os.path.join(out_dir, "speed_curve.csv")
        write_speed_curve_csv(result, path)
        outputs.append(path)
        cfg = grid_cfg
    else:
        cfg = _experiment_config(args, law)
        if args.which == "tau-tail":
            res = run_tau_tail(cfg)
            path = os.path.join(out_dir, "tau_tail.csv")
            write_tau_tail_csv(res, path)
            fits = {
                "samples": len(res.samples),
                "exponential": {"rate": res.exponential.rate, "r_squared": res.exponential.r_squared},
                "stretched": {"rate": res.stretched.rate, "r_squared": res.stretched.r_squared},
                "exponential_preferred": res.exponential_preferred,
            }
            fit_path = os.path.join(out_dir, "fits.json")
            atomic_write_text(fit_path, json.dumps(fits, indent=2, sort_keys=True) + "\n")
            outputs += [path, fit_path]
        elif args.which == "k-geom":
            res = run_K_and_M(cfg)
            path = os.path.join(out_dir, "k_hist.csv")
            write_k_hist_csv(res, path)
            summary = {
                "theta_hat": res.geometric.theta_hat,
                "p_value": res.geometric.p_value,
                "theta_ref": res.theta_ref.mean,
                "m_tail": {"rate": res.m_fit.rate, "r_squared": res.m_fit.r_squared},
                "k_samples": len(res.k_samples),
                "m_samples": len(res.m_samples),
            }
            sum_path = os.path.join(out_dir, "k_geom.json")
            atomic_write_text(sum_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
            outputs += [path, sum_path]
        elif args.which == "concentration":
            curve = run_concentration(cfg)
            path = os.path.join(out_dir, "concentration.csv")
            write_concentration_csv(curve, path)
            summary = {
                "v_ref": curve.v_ref.mean,
                "rates": curve.rates,
                "statuses": [s.value for s in curve.fit_statuses],
            }
            sum_path = os.path.join(out_dir, "concentration.json")
            atomic_write_text(sum_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
            outputs += [path, sum_path]
        else:  # escape
            res = estimate_escape(cfg)
            summary = {
                "escape_probability": res.estimate.mean,
                "half_width": res.estimate.half_width,
                "replicas": res.estimate.n,
                "undecided": res.n_undecided,
                "depth_goal": res.depth_goal,
            }
            path = os.path.join(out_dir, "escape.json")
            atomic_write_text(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
            outputs.append(path)

    config = {
        "p" if args.q is None else "q": args.q or str(args.p if args.p is not None else 0.5),
        "steps": str(cfg.horizon),
        "replicas": str(cfg.replicas),
        "seed": str(cfg.master_seed),
    }
    write_run_manifest(out_dir, f"experiments {args.which}", config, cfg.master_seed, outputs, started)
    for p in outputs:
        print(f"wrote {p}")
    return 0


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tbrw",
        description="Tree-builder random walk: simulation, verification, experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p: argparse.ArgumentParser, *, replicas: bool = True) -> None:
        p.add_argument("--p", type=float, default=None, help="Bernoulli leaf probability")
        p.add_argument("--q", type=str, default=None, help="general pmf, e.g. '0:0.5,2:0.5'")
        p.add_argument("--steps", type=int, default=None, help="steps per replica")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out-dir", dest="out_dir", type=str, default=None)
        p.add_argument("--config", type=str, default=None, help="key=value file or manifest JSON")
        if replicas:
            p.add_argument("--replicas", type=int, default=None)

    sim = sub.add_parser("simulate", help="run one replica and dump its trajectory")
    common(sim, replicas=False)
    sim.add_argument("--replica", type=int, default=0, help="replica index within the seed")
    sim.add_argument("--retention", choices=["summary", "full"], default=None)

    fig = sub.add_parser("figures", help="emit plot-ready figure data")
    fig.add_argument("figure", choices=["tree-gallery", "speed-curve"])
    common(fig)

    ver = sub.add_parser("verify", help="exact checks; exit 0 iff all hold")
    ver.add_argument("check", choices=["an-bound", "ho-series", "normalization", "cross-validate"])
    common(ver)
    ver.add_argument("--r", type=float, default=None, help="probe circle radius (an-bound)")
    ver.add_argument("--n", type=int, default=None, help="horizon / horizon cap")

    exp = sub.add_parser("experiments", help="replica sweeps with CSV outputs")
    exp.add_argument("which", choices=["tau-tail", "k-geom", "concentration", "escape", "speed"])
    common(exp)
    exp.add_argument("--depth-margin", dest="depth_margin", type=int, default=None)
    exp.add_argument("--horizon-margin", dest="horizon_margin", type=int, default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    handler = {
        "simulate": cmd_simulate,
        "figures": cmd_figures,
        "verify": cmd_verify,
        "experiments": cmd_experiments,
    }[args.cmd]
    try:
        return handler(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except DegenerateLawError as e:
        print(f"degenerate law: {e}", file=sys.stderr)
        return 2
    except (UndersampledError, CapacityError) as e:
        print(f"capacity: {e}", file=sys.stderr)
        return 3
    except TbrwError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
