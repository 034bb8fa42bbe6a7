"""Command-line interface: ``geomekf bench | simulate | check``.

Configuration comes from a JSON file (``--config``) mirroring
:class:`geomekf.ins.TrajectoryConfig` under a ``trajectory`` key, plus
``runs``, ``seed``, ``variants``, ``out`` and ``jacobian_mode``; command-line
flags override file values.  Unknown keys are rejected.  Every output
directory receives a ``manifest.json`` (config, config hash, seed, tool
version) sufficient to reproduce the run exactly.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-threshold failure (``check``).  The ``GEOMEKF_WORKERS``
environment variable sets the Monte Carlo worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, bench, ins
from .filters import DivergenceError, FilterNumericalError
from .groups import SE3, SE23, SO3, Euclidean
from .manifold import GeometryError, jacobian_order_fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_THRESHOLD = 4

_CONFIG_KEYS = ("trajectory", "runs", "seed", "variants", "out", "jacobian_mode")


class ConfigError(Exception):
    pass


def _find_line(text, key):
    for ln, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return ln
    return None


def load_config(path):
    """Parse and validate a JSON config file; unknown keys are errors."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as err:
        raise ConfigError(f"{path}: {err}") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}: invalid JSON: {err.msg}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be an object")
    for key in raw:
        if key not in _CONFIG_KEYS:
            ln = _find_line(text, key)
            raise ConfigError(
                f"{path}:{ln}: unknown key {key!r} (expected one of "
                f"{sorted(_CONFIG_KEYS)})"
            )
    traj_fields = {f.name for f in dataclasses.fields(ins.TrajectoryConfig)}
    traj_raw = raw.get("trajectory", {})
    if not isinstance(traj_raw, dict):
        raise ConfigError(f"{path}: 'trajectory' must be an object")
    for key in traj_raw:
        if key not in traj_fields:
            ln = _find_line(text, key)
            raise ConfigError(
                f"{path}:{ln}: unknown trajectory key {key!r}"
            )
    kwargs = {
        k: tuple(v) if isinstance(v, list) else v for k, v in traj_raw.items()
    }
    try:
        traj = ins.TrajectoryConfig(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: invalid trajectory config: {err}") from err
    variants = raw.get("variants", list(bench.DEFAULT_VARIANT_ORDER))
    for v in variants:
        if v not in bench.VARIANTS:
            ln = _find_line(text, v)
            raise ConfigError(
                f"{path}:{ln}: unknown variant {v!r}; known: "
                f"{sorted(bench.VARIANTS)}"
            )
    mode = raw.get("jacobian_mode", "closed_form")
    return {
        "trajectory": traj,
        "runs": int(raw.get("runs", 100)),
        "seed": int(raw.get("seed", 0)),
        "variants": list(variants),
        "out": raw.get("out", "out"),
        "jacobian_mode": mode,
    }


def _effective_config(args):
    cfg = (
        load_config(args.config)
        if args.config
        else {
            "trajectory": ins.TrajectoryConfig(),
            "runs": 100,
            "seed": 0,
            "variants": list(bench.DEFAULT_VARIANT_ORDER),
            "out": "out",
            "jacobian_mode": "closed_form",
        }
    )
    if args.runs is not None:
        cfg["runs"] = args.runs
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "variants", None):
        names = [v.strip() for v in args.variants.split(",") if v.strip()]
        for v in names:
            if v not in bench.VARIANTS:
                raise ConfigError(
                    f"unknown variant {v!r}; known: {sorted(bench.VARIANTS)}"
                )
        cfg["variants"] = names
    if args.out is not None:
        cfg["out"] = args.out
    if getattr(args, "jacobian_mode", None):
        cfg["jacobian_mode"] = args.jacobian_mode
    return cfg


def _config_dict(cfg):
    d = dataclasses.asdict(cfg["trajectory"])
    return {
        "trajectory": d,
        "runs": cfg["runs"],
        "seed": cfg["seed"],
        "variants": cfg["variants"],
        "jacobian_mode": cfg["jacobian_mode"],
    }


def write_manifest(cfg, outdir):
    payload = _config_dict(cfg)
    blob = json.dumps(payload, sort_keys=True).encode()
    manifest = {
        "config": payload,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": cfg["seed"],
        "tool": "geomekf",
        "version": __version__,
    }
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def cmd_bench(args):
    cfg = _effective_config(args)
    outdir = cfg["out"]
    campaign = bench.monte_carlo(
        cfg["trajectory"],
        variants=cfg["variants"],
        runs=cfg["runs"],
        seed=cfg["seed"],
        mode=cfg["jacobian_mode"],
    )
    write_manifest(cfg, outdir)
    for fmt in ("csv", "table", "plot"):
        bench.emit(campaign, fmt, outdir)
    print(bench.format_table(campaign))
    total_div = sum(campaign.aggregate.divergent.values())
    if total_div:
        print(f"divergent runs (excluded from aggregates): {total_div}")
    print(f"outputs written to {outdir}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _effective_config(args)
    outdir = cfg["out"]
    traj = cfg["trajectory"]
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]).spawn(1)[0])
    run = ins.simulate_run(traj, rng)
    os.makedirs(outdir, exist_ok=True)
    write_manifest(cfg, outdir)

    def w(x):
        return repr(float(x))

    path = os.path.join(outdir, "truth.csv")
    with open(path, "w") as f:
        cols = [f"r{i}{j}" for i in range(1, 4) for j in range(1, 4)]
        f.write("t," + ",".join(cols) + ",vx,vy,vz,px,py,pz\n")
        for k in range(run.truth.shape[0]):
            g = run.truth[k]
            row = [w(run.t_imu[k])]
            row += [w(x) for x in g[:3, :3].ravel()]
            row += [w(x) for x in g[:3, 3]]
            row += [w(x) for x in g[:3, 4]]
            f.write(",".join(row) + "\n")

    path = os.path.join(outdir, "imu.csv")
    with open(path, "w") as f:
        f.write("t,wx,wy,wz,ax,ay,az\n")
        for k in range(run.t_imu.shape[0]):
            f.write(
                ",".join(
                    [w(run.t_imu[k])]
                    + [w(x) for x in run.omega[k]]
                    + [w(x) for x in run.accel[k]]
                )
                + "\n"
            )

    path = os.path.join(outdir, "measurements.csv")
    with open(path, "w") as f:
        cols = [f"r{i}{j}" for i in range(1, 4) for j in range(1, 4)]
        f.write("t," + ",".join(cols) + ",px,py,pz\n")
        for k in range(run.t_meas.shape[0]):
            y = run.measurements[k]
            row = [w(run.t_meas[k])]
            row += [w(x) for x in y[:3, :3].ravel()]
            row += [w(x) for x in y[:3, 3]]
            f.write(",".join(row) + "\n")
    print(f"wrote truth/imu/measurement streams to {outdir}")
    return EXIT_OK


_GEOMETRIES = {
    "euclidean": lambda: Euclidean(9),
    "so3": SO3,
    "se3": SE3,
    "se23": SE23,
}

_SLOPE_THRESHOLDS = {"pt_curvature": 3.5, "pt_only": 1.8}


def cmd_check(args):
    geo = _GEOMETRIES[args.geometry]()
    modes = [args.mode] if args.mode else ["pt_curvature", "pt_only"]
    rows_out = []
    ok = True
    print(f"{'which':12s} {'mode':14s} {'slope':>8s} {'max error':>12s}  threshold")
    for which in ("tangential", "positional"):
        for mode in modes:
            thr = _SLOPE_THRESHOLDS[mode]
            try:
                fit = jacobian_order_fit(geo, which, mode, seed=args.seed or 0)
            except GeometryError:
                # flat geometry: approximation is exact, nothing to fit
                print(f"{which:12s} {mode:14s} {'exact':>8s} {0.0:12.3e}  (>= {thr})")
                continue
            passed = fit.slope >= thr
            ok = ok and passed
            print(
                f"{which:12s} {mode:14s} {fit.slope:8.2f} {fit.max_error:12.3e}"
                f"  (>= {thr}) {'ok' if passed else 'FAIL'}"
            )
            rows_out += [(which,) + r for r in fit.csv_rows()]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "order_fit.csv")
        with open(path, "w") as f:
            f.write("which,mode,scale,error\n")
            for which, mode, scale, err in rows_out:
                f.write(f"{which},{mode},{scale!r},{err!r}\n")
        print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_THRESHOLD


def build_parser():
    p = argparse.ArgumentParser(
        prog="geomekf",
        description=(
            "Geometric EKF benchmarks on SE2(3). Set GEOMEKF_WORKERS to "
            "parallelize Monte Carlo runs."
        ),
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--runs", type=int, help="Monte Carlo run count")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")

    pb = sub.add_parser("bench", parents=[common],
                        help="run the Monte Carlo benchmark")
    pb.add_argument("--variants", help="comma-separated variant names")
    pb.add_argument(
        "--jacobian-mode", dest="jacobian_mode",
        choices=["closed_form", "pt_curvature", "pt_only", "finite_diff"],
        help="Jacobian evaluation mode for the geometric corrections",
    )
    pb.set_defaults(func=cmd_bench)

    ps = sub.add_parser("simulate", parents=[common],
                        help="generate truth/sensor streams only")
    ps.set_defaults(func=cmd_simulate)

    pc = sub.add_parser("check", help="Jacobian approximation order fits")
    pc.add_argument("--geometry", choices=sorted(_GEOMETRIES), default="so3")
    pc.add_argument("--mode", choices=sorted(_SLOPE_THRESHOLDS))
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--out")
    pc.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FilterNumericalError, DivergenceError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
