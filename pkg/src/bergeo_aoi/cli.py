"""Command-line front end: ``analyze``, ``validate``, ``simulate``, ``sweep``.

Exit codes: 0 success, 1 internal error, 2 usage or config error,
3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__, analytic, dtmc, sim
from .kernels import BACKEND
from .model import ConfigError, SystemConfig, derive_all, load_config, parse_inline

log = logging.getLogger("bergeo_aoi")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_VALIDATION = 0, 1, 2, 3
MAX_GRID = 10**4
# a replication shorter than this many mean AoI periods is flagged as too short
SHORT_RUN_FACTOR = 1000


def warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


class UsageError(Exception):
    pass


class ValidationFailed(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_config(args) -> SystemConfig:
    inline = args.q is not None or args.gamma is not None
    if inline and (args.q is None or args.gamma is None):
        raise UsageError("--q and --gamma must be given together")
    if inline:
        if args.config:
            warn("both --config and inline --q/--gamma given; using the inline values")
        return parse_inline(_floats(args.q), _floats(args.gamma))
    if not args.config:
        raise UsageError("a config is required: --config FILE or --q ... --gamma ...")
    return load_config(args.config)


def config_source(args) -> str:
    if args.q is not None:
        return f"inline --q {args.q} --gamma {args.gamma}"
    return f"file {args.config}"


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def make_manifest(command: str, config: SystemConfig, params: dict, outputs: list[str]) -> dict:
    """Manifest dict; ``params["_config_source"]`` is lifted to the top level."""
    params = dict(params)
    return {
        "command": command,
        "tool": "bergeo-aoi",
        "version": __version__,
        "kernel_backend": BACKEND,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config_source": params.pop("_config_source", None),
        "config": config.to_json(),
        "parameters": params,
        "outputs": outputs,
    }


def write_manifest(out_dir: Path, command: str, config: SystemConfig, params: dict, outputs: list[str]):
    manifest = make_manifest(command, config, params, outputs)
    (out_dir / "manifest.json").write_text(json.dumps(_json_safe(manifest), indent=2) + "\n")
    return manifest


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- analyze

SUMMARY_HEADER = [
    "source", "p_i", "p", "lambda", "alpha", "beta", "repeated_root",
    "mean_aoi", "n_max", "tail_mass",
]


def analyze_tables(config: SystemConfig, n_max: int | None):
    summary, pmf_rows, blobs = [], [], []
    for params in derive_all(config):
        dist = analytic.aoi_distribution(params, n_max=n_max)
        i = params.source_index
        summary.append([
            i, params.p_i, params.p, params.lam, params.alpha, params.beta,
            params.repeated_root, dist.mean, dist.n_max, dist.tail_mass,
        ])
        pmf_rows.extend([i, int(n), float(v)] for n, v in zip(dist.support, dist.values))
        blobs.append({
            "source": i,
            "p_i": params.p_i,
            "p": params.p,
            "lambda": params.lam,
            "alpha": params.alpha,
            "beta": params.beta,
            "repeated_root": params.repeated_root,
            "mean_aoi": dist.mean,
            "n_max": dist.n_max,
            "tail_mass": dist.tail_mass,
            "pmf": dist.values.tolist(),
        })
    return summary, pmf_rows, blobs


def cmd_analyze(args) -> int:
    config = resolve_config(args)
    if args.n_max is not None and args.n_max < 2:
        raise UsageError("--n-max must be >= 2")
    summary, pmf_rows, blobs = analyze_tables(config, args.n_max)
    if args.format == "json":
        text = {"json": json.dumps({"sources": blobs}, indent=2) + "\n"}
    else:
        text = {
            "summary.csv": _csv_text(SUMMARY_HEADER, summary),
            "pmf.csv": _csv_text(["source", "n", "probability"], pmf_rows),
        }
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        names = []
        for name, body in text.items():
            name = "analysis.json" if name == "json" else name
            (out / name).write_text(body)
            names.append(name)
        write_manifest(out, "analyze", config, {
            "_config_source": config_source(args), "n_max": args.n_max, "format": args.format,
        }, names)
    else:
        sys.stdout.write("\n".join(text.values()) if args.format == "csv" else text["json"])
    return EXIT_OK


# --------------------------------------------------------------- validate


def pmf_threshold(z: float, bins: int, reps: int, correction: str) -> float:
    """Per-bin |z| threshold for a family of ``bins`` pmf comparisons.

    ``"bonferroni"`` keeps the family-wise false-alarm rate at the two-sided
    normal tail of ``z`` and uses the t distribution with ``reps - 1``
    degrees of freedom, since each standard error is itself estimated.
    """
    if correction == "none" or bins <= 1 or reps < 2:
        return z
    alpha = 2.0 * sps.norm.sf(z)
    return float(sps.t.isf(alpha / (2.0 * bins), reps - 1))


def cmd_validate(args) -> int:
    config = resolve_config(args)
    if args.sim_slots < 2:
        raise UsageError("--sim-slots must be >= 2")
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    warmup = min(sim.DEFAULT_WARMUP, args.sim_slots // 10)
    stats = sim.run_replications(
        config, "retransmission", args.sim_slots, warmup, args.seed, args.reps, jobs=args.jobs
    )
    failures, insufficient = [], []
    rows = []
    for params in derive_all(config):
        i = params.source_index
        n_max = args.n_max or dtmc.default_n_max(params)
        grid = dtmc.solve(params, n_max=n_max)
        rep = dtmc.compare_to_analytic(grid, params, tolerance=args.tol)
        rows.append((i, "analytic-vs-dtmc", "max_abs_state", rep.max_abs, args.tol, rep.passed))
        rows.append((i, "analytic-vs-dtmc", "max_abs_marginal", rep.marginal_max_abs, args.tol, rep.passed))
        if not rep.passed:
            dev = max(rep.max_abs, rep.marginal_max_abs, rep.boundary_error)
            failures.append(f"source {i}: analytic vs DTMC deviation {dev:.3e} > {args.tol:g}")

        se = float(stats.stderr[i - 1])
        if stats.reps < 2 or not math.isfinite(se):
            insufficient.append(i)
            failures.append(f"source {i}: analytic vs sim needs at least 2 replications")
            continue
        exact_mean = analytic.aoi_mean(params)
        if stats.recorded_slots < SHORT_RUN_FACTOR * exact_mean:
            insufficient.append(i)
        mean_z = sim.zscore(float(stats.mean[i - 1]), exact_mean, se)
        ok_mean = abs(mean_z) <= args.z
        rows.append((i, "analytic-vs-sim", "mean_z", mean_z, args.z, ok_mean))
        if not ok_mean:
            failures.append(f"source {i}: simulated mean z-score {mean_z:.2f} exceeds {args.z:g}")

        expected = analytic.aoi_distribution(params).values
        zs = sim.pmf_zscores(stats, i, expected)
        if not zs:
            insufficient.append(i)
            failures.append(f"source {i}: analytic vs sim pmf has no bin with expected count >= 50")
            continue
        limit = pmf_threshold(args.z, len(zs), stats.reps, args.pmf_correction)
        worst = max(abs(z) for _, z in zs)
        ok_pmf = worst <= limit
        rows.append((i, "analytic-vs-sim", f"max_abs_pmf_z({len(zs)} bins)", worst, limit, ok_pmf))
        if not ok_pmf:
            bad = [n for n, z in zs if abs(z) > limit]
            failures.append(f"source {i}: simulated pmf z-score exceeds {limit:.3g} at n={bad}")

    sys.stdout.write(_csv_text(
        ["source", "comparison", "statistic", "value", "threshold", "pass"], rows
    ))
    if insufficient:
        warn(
            "insufficient statistics for source(s) "
            f"{','.join(map(str, sorted(set(insufficient))))}: raise --sim-slots/--reps"
        )
    if failures:
        raise ValidationFailed("; ".join(failures))
    return EXIT_OK


# --------------------------------------------------------------- simulate


def ci_halfwidth(stderr: np.ndarray, reps: int, level: float = 0.95) -> np.ndarray:
    if reps < 2:
        return np.full_like(stderr, np.nan)
    return sps.t.ppf(0.5 + level / 2, reps - 1) * stderr


def simulate_outputs(stats: sim.SimStats):
    rows = []
    for i in range(1, stats.config.n_sources + 1):
        emp = sim.empirical_pmf(stats, i)
        rows.extend([i, int(n), float(p), float(s)] for n, p, s in zip(emp.n, emp.probability, emp.stderr))
    half = ci_halfwidth(stats.stderr, stats.reps)
    summary = stats.summary()
    summary["ci95"] = [[m - h, m + h] for m, h in zip(stats.mean.tolist(), half.tolist())]
    summary["overflow_fraction"] = [
        sim.empirical_pmf(stats, i).overflow for i in range(1, stats.config.n_sources + 1)
    ]
    return rows, summary


def cmd_simulate(args) -> int:
    config = resolve_config(args)
    if args.slots <= args.warmup:
        raise UsageError("--slots must exceed --warmup")
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    stats = sim.run_replications(
        config, args.policy, args.slots, args.warmup, args.seed, args.reps,
        hist_cap=args.hist_cap, jobs=args.jobs,
    )
    rows, summary = simulate_outputs(stats)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        pmf_name = "pmf.json"
        body = json.dumps(
            [{"source": r[0], "n": r[1], "probability": r[2], "stderr": r[3]} for r in rows]
        ) + "\n"
    else:
        pmf_name = "pmf.csv"
        body = _csv_text(["source", "n", "probability", "stderr"], rows)
    (out / pmf_name).write_text(body)
    params = {
        "_config_source": config_source(args),
        "policy": args.policy, "slots": args.slots, "warmup": args.warmup,
        "reps": args.reps, "seed": args.seed, "hist_cap": args.hist_cap, "format": args.format,
    }
    summary["manifest"] = write_manifest(out, "simulate", config, params, [pmf_name, "summary.json"])
    (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2) + "\n")
    for i, (m, s) in enumerate(zip(stats.mean, stats.stderr), start=1):
        print(f"source {i}: mean AoI {m:.6f} +/- {s:.6f} (stderr, {stats.reps} reps)")
    return EXIT_OK


# ------------------------------------------------------------------ sweep


def parse_axis(spec: str, n_sources: int):
    """``q1=0.1:0.9:9`` (linspace) or ``q1,gamma1=0.1,0.3`` (list, tied parameters)."""
    if "=" not in spec:
        raise UsageError(f"malformed axis {spec!r}: expected NAME[,NAME...]=VALUES")
    names, values = spec.split("=", 1)
    targets = []
    for name in names.split(","):
        name = name.strip()
        for prefix in ("gamma", "q"):
            if name.startswith(prefix) and name[len(prefix):].isdigit():
                idx = int(name[len(prefix):])
                if not 1 <= idx <= n_sources:
                    raise UsageError(f"axis {name!r}: source index out of range 1..{n_sources}")
                targets.append((prefix, idx))
                break
        else:
            raise UsageError(f"axis parameter {name!r} must look like q<i> or gamma<i>")
    if ":" in values:
        parts = values.split(":")
        if len(parts) != 3:
            raise UsageError(f"axis range {values!r} must be START:STOP:COUNT")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"axis range {values!r} must be START:STOP:COUNT") from None
        if count < 1:
            raise UsageError("axis COUNT must be >= 1")
        grid = np.linspace(lo, hi, count).tolist()
    else:
        grid = _floats(values)
    if not grid:
        raise UsageError(f"axis {spec!r} has no values")
    return targets, grid


def sweep_points(config: SystemConfig, axes):
    sizes = [len(g) for _, g in axes]
    if math.prod(sizes) > MAX_GRID:
        raise UsageError(f"sweep grid has {math.prod(sizes)} points (limit {MAX_GRID})")
    for combo in itertools.product(*[g for _, g in axes]):
        q = list(config.q)
        gamma = list(config.gamma)
        for (targets, _), value in zip(axes, combo):
            for kind, idx in targets:
                (q if kind == "q" else gamma)[idx - 1] = value
        yield parse_inline(q, gamma)


def cmd_sweep(args) -> int:
    config = resolve_config(args)
    axes = [parse_axis(spec, config.n_sources) for spec in (args.axis or [])]
    points = list(sweep_points(config, axes))
    engines = ["analytic", "sim"] if args.engine == "both" else [args.engine]
    policies = [p.strip() for p in args.policy.split(",")]
    for p in policies:
        if p not in sim.POLICIES:
            raise UsageError(f"unknown policy {p!r}")
    if args.slots <= args.warmup:
        raise UsageError("--slots must exceed --warmup")

    jobs = sim.default_jobs() if args.jobs is None else max(1, args.jobs)

    def evaluate(k_point):
        k, point = k_point
        out = []
        for engine in engines:
            for policy in policies:
                if engine == "analytic":
                    if policy != "retransmission":
                        continue
                    for params in derive_all(point):
                        out.append((k, point, params.source_index, engine, policy,
                                    analytic.aoi_mean(params), ""))
                else:
                    st = sim.run_replications(
                        point, policy, args.slots, args.warmup, args.seed, args.reps, jobs=1
                    )
                    for i in range(point.n_sources):
                        out.append((k, point, i + 1, engine, policy,
                                    float(st.mean[i]), float(st.stderr[i])))
        return out

    if jobs > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate, enumerate(points)))
    else:
        results = [evaluate(kp) for kp in enumerate(points)]

    n = config.n_sources
    header = ["point"] + [f"q{i}" for i in range(1, n + 1)] + [f"gamma{i}" for i in range(1, n + 1)]
    header += ["source", "engine", "policy", "mean_aoi", "stderr"]
    rows = []
    for chunk in results:
        for k, point, src, engine, policy, mean, se in chunk:
            rows.append([k, *point.q, *point.gamma, src, engine, policy, mean, se])
    body = _csv_text(header, rows)
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(body)
        params = {
            "_config_source": config_source(args),
            "axes": args.axis or [], "engine": args.engine, "policy": policies,
            "slots": args.slots, "warmup": args.warmup, "reps": args.reps, "seed": args.seed,
        }
        write_manifest(out.parent, "sweep", config, params, [out.name])
    else:
        sys.stdout.write(body)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bergeo-aoi",
        description="Per-source AoI of a multi-source Ber/Geo/1/1 preemptive link.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="JSON file {\"sources\": [{\"q\": .., \"gamma\": ..}, ...]}")
        p.add_argument("--q", help="comma-separated generation probabilities (overrides --config)")
        p.add_argument("--gamma", help="comma-separated success probabilities (overrides --config)")

    def sim_args(p, slots=sim.DEFAULT_HORIZON):
        p.add_argument("--slots", type=int, default=slots)
        p.add_argument("--warmup", type=int, default=sim.DEFAULT_WARMUP)
        p.add_argument("--reps", type=int, default=sim.DEFAULT_REPS)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=None,
                       help=f"worker threads (default ${sim.THREADS_ENV} or 1)")

    p = sub.add_parser("analyze", help="closed-form pmf and mean per source")
    config_args(p)
    p.add_argument("--n-max", type=int, default=None,
                   help="last AoI value to print (default: tail below 1e-12)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output-dir", help="write files and manifest here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="cross-check closed form, chain solver and simulator")
    config_args(p)
    p.add_argument("--n-max", type=int, default=None, help="chain truncation (default: tail below 1e-10)")
    p.add_argument("--tol", type=float, default=1e-8, help="max-abs analytic-vs-chain tolerance")
    p.add_argument("--sim-slots", type=int, default=sim.DEFAULT_HORIZON)
    p.add_argument("--reps", type=int, default=sim.DEFAULT_REPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--z", type=float, default=3.0, help="z-score threshold")
    p.add_argument("--pmf-correction", choices=("bonferroni", "none"), default="bonferroni",
                   help="multiple-comparison adjustment of the per-n pmf threshold")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="Monte Carlo AoI histograms")
    config_args(p)
    p.add_argument("--policy", choices=sim.POLICIES, default="retransmission")
    sim_args(p)
    p.add_argument("--hist-cap", type=int, default=sim.DEFAULT_HIST_CAP)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="mean AoI over a parameter grid (long-form CSV)")
    config_args(p)
    p.add_argument("--axis", action="append",
                   help="NAME[,NAME...]=START:STOP:COUNT or =V1,V2,...; NAME is q<i> or gamma<i>")
    p.add_argument("--engine", choices=("analytic", "sim", "both"), default="analytic")
    p.add_argument("--policy", default="retransmission",
                   help="comma-separated policies for the sim engine")
    sim_args(p)
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationFailed as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
