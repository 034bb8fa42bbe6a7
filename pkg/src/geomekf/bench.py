"""Monte Carlo benchmark harness for the inertial-navigation case study.

Runs paired campaigns (every filter variant consumes bit-identical sensor
streams and the same initial estimate), aggregates block RMSE per phase and
the per-epoch ANEES consistency statistic, and emits CSV tables, a text
table and static plots.

The propagation between measurement epochs is precomputed per run: the flow
factors, error-state transitions and process noise increments depend only on
the inputs, never on the filter state, so each variant advances one epoch
with two matrix products and one covariance sandwich.  This is algebraically
identical to stepping the filter sample by sample (asserted in the tests).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ins
from .filters import (
    DivergenceError,
    FilterNumericalError,
    FilterState,
    FilterVariant,
    iterated_update,
    propagate,
    reset,
    step,
    update,
)

__all__ = [
    "VARIANTS",
    "DEFAULT_VARIANT_ORDER",
    "RunReport",
    "AggregateReport",
    "CampaignResult",
    "rmse",
    "anees",
    "chi2_band",
    "monte_carlo",
    "run_filter_stepwise",
    "emit",
    "aggregate_from_csv",
]

#: The ablation grid: geometric update and reset toggled independently, plus
#: the iterated variants.
VARIANTS = {
    "ekf": FilterVariant(False, False, False, name="ekf"),
    "itekf": FilterVariant(False, False, True, name="itekf"),
    "gekf": FilterVariant(True, True, False, name="gekf"),
    "gitekf": FilterVariant(True, True, True, name="gitekf"),
    "gekf-update": FilterVariant(True, False, False, name="gekf-update"),
    "gekf-reset": FilterVariant(False, True, False, name="gekf-reset"),
}

DEFAULT_VARIANT_ORDER = (
    "ekf",
    "gekf",
    "gitekf",
    "itekf",
    "gekf-update",
    "gekf-reset",
)

_DIVERGENCE_NORM = 1e3


@dataclass(frozen=True)
class RunReport:
    """Per-run, per-variant record at the measurement epochs.

    ``seed`` is the campaign master seed; together with ``run_idx`` it
    identifies the sensor streams the run consumed.  Full per-step state and
    covariance records are available through the filter trace interface.
    """

    variant: str
    run_idx: int
    t: np.ndarray
    eps: np.ndarray          # (epochs, 9) truth (-) estimate in estimate chart
    nees: np.ndarray         # (epochs,) eps^T cov^{-1} eps
    iterations: np.ndarray   # (epochs,) applied update iterations (0 if plain)
    diverged: bool = False
    reason: str = ""
    seed: int = 0


@dataclass
class AggregateReport:
    """Campaign aggregates: per-variant, per-phase RMSE and ANEES series."""

    variants: tuple
    phases: tuple            # ((name, t_lo, t_hi), ...)
    t: np.ndarray
    rmse_table: dict         # rmse_table[variant][phase] = (rot_deg, pos_m, vel_mps)
    anees_series: dict       # anees_series[variant] = (epochs,) array
    band_lo: dict
    band_hi: dict
    runs: int = 0
    divergent: dict = None
    one_iter_fraction: dict = None

    def equals(self, other):
        if (
            tuple(self.variants) != tuple(other.variants)
            or tuple(self.phases) != tuple(other.phases)
            or not np.array_equal(self.t, other.t)
            or self.runs != other.runs
        ):
            return False
        for v in self.variants:
            for ph in self.rmse_table[v]:
                if self.rmse_table[v][ph] != other.rmse_table[v][ph]:
                    return False
            for d_self, d_other in (
                (self.anees_series, other.anees_series),
                (self.band_lo, other.band_lo),
                (self.band_hi, other.band_hi),
            ):
                if not np.array_equal(d_self[v], d_other[v]):
                    return False
            if self.divergent[v] != other.divergent[v]:
                return False
        return True


@dataclass
class CampaignResult:
    config: ins.TrajectoryConfig
    seed: int
    variants: tuple
    runs: list
    aggregate: AggregateReport


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------


def rmse(block_errors):
    """Root mean squared block norm.

    Accepts an array of block vectors ``(..., b)`` or of scalar block norms;
    flattens everything except the block axis.
    """
    e = np.asarray(block_errors, dtype=float)
    if e.size == 0:
        raise ValueError("rmse of an empty error set")
    norms_sq = e**2 if e.ndim == 1 else np.sum(
        e.reshape(-1, e.shape[-1]) ** 2, axis=1
    )
    return float(np.sqrt(np.mean(norms_sq)))


def chi2_band(n, M, confidence=0.95):
    """Two-sided chi-square acceptance band for the mean of ``M`` NEES
    samples of dimension ``n``, normalized by ``n``."""
    from scipy.stats import chi2

    dof = n * M
    a = 0.5 * (1.0 - confidence)
    return chi2.ppf(a, dof) / dof, chi2.ppf(1.0 - a, dof) / dof


def anees(errors, covs, n=None, M=None):
    """Average normalized estimation error squared with its 95% band.

    ``errors`` is (M, n) and ``covs`` (M, n, n); returns
    ``(anees, band_lo, band_hi)``.  A consistent filter gives values near 1.
    """
    errors = np.asarray(errors, dtype=float)
    covs = np.asarray(covs, dtype=float)
    M_eff = errors.shape[0] if M is None else M
    n_eff = errors.shape[1] if n is None else n
    if M_eff < 1:
        raise ValueError("anees needs at least one run")
    total = 0.0
    for e, S in zip(errors, covs):
        total += float(e @ np.linalg.solve(S, e))
    lo, hi = chi2_band(n_eff, M_eff)
    return total / (n_eff * M_eff), lo, hi


# ----------------------------------------------------------------------
# per-run execution
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class _EpochData:
    """Per-epoch composed propagation: state factors, error transition and
    accumulated process noise, plus the truth poses for error evaluation."""

    E_pow: np.ndarray        # (5, 5) left factor to the power steps-per-epoch
    W_prod: np.ndarray       # (epochs, 5, 5) right factor products
    Phi: np.ndarray          # (epochs, 9, 9) composed transitions
    Q_acc: np.ndarray        # (epochs, 9, 9) accumulated process noise
    truth_epochs: np.ndarray # (epochs, 5, 5)


def _precompute_epochs(config, run):
    dt = config.dt
    spm = config.steps_per_meas
    n_meas = config.n_meas
    q_in = np.zeros(6)
    q_in[:3] = max(config.gyro_noise_std, ins._COV_FLOOR) ** 2 * config.imu_rate
    q_in[3:] = max(config.accel_noise_std, ins._COV_FLOOR) ** 2 * config.imu_rate

    n_used = n_meas * spm
    W = ins.batch_input_factors(run.omega[:n_used], run.accel[:n_used], dt)
    A = ins.batch_transitions(W, dt)
    B = ins.batch_input_jacobians(run.omega[:n_used], run.accel[:n_used], dt)
    Q = (B * q_in[None, None, :]) @ np.swapaxes(B, 1, 2)

    E = ins.gravity_factor(dt, config.gravity)
    E_pow = np.linalg.matrix_power(E, spm)

    W_prod = np.empty((n_meas, 5, 5))
    Phi = np.empty((n_meas, 9, 9))
    Q_acc = np.empty((n_meas, 9, 9))
    for j in range(n_meas):
        wp = W[j * spm]
        phi = A[j * spm]
        qa = Q[j * spm]
        for k in range(j * spm + 1, (j + 1) * spm):
            wp = wp @ W[k]
            phi = A[k] @ phi
            qa = A[k] @ qa @ A[k].T + Q[k]
        W_prod[j] = wp
        Phi[j] = phi
        Q_acc[j] = 0.5 * (qa + qa.T)
    idx = (np.arange(1, n_meas + 1)) * spm
    return _EpochData(E_pow, W_prod, Phi, Q_acc, run.truth[idx])


def _run_variant(config, run, pre, variant, meas_model, cov0, run_idx,
                 mode="closed_form", seed=0):
    geo = ins.STATE_GEOMETRY
    n_meas = config.n_meas
    est = geo.exp(run.truth[0], run.init_offset)
    cov = cov0.copy()
    t = run.t_meas
    eps = np.zeros((n_meas, 9))
    nees = np.zeros(n_meas)
    iters = np.zeros(n_meas, dtype=int)
    spm = config.steps_per_meas
    try:
        for j in range(n_meas):
            est = pre.E_pow @ est @ pre.W_prod[j]
            cov = pre.Phi[j] @ cov @ pre.Phi[j].T + pre.Q_acc[j]
            cov = 0.5 * (cov + cov.T)
            state = FilterState(est, cov, (j + 1) * spm)
            y = run.measurements[j]
            if variant.iterated:
                state, info = iterated_update(
                    state, y, meas_model, geo, variant, mode
                )
                iters[j] = info.iterations
            else:
                mu, cov_plus, _ = update(
                    state, y, meas_model, variant.geometric_update, mode
                )
                state = reset(
                    geo, state.estimate, mu, cov_plus, variant.geometric_reset,
                    k=state.k, mode=mode,
                )
            est, cov = state.estimate, state.cov
            e = geo.log(est, pre.truth_epochs[j])
            eps[j] = e
            nees[j] = e @ np.linalg.solve(cov, e)
            if not np.isfinite(nees[j]) or np.linalg.norm(e) > _DIVERGENCE_NORM:
                return RunReport(
                    variant.name, run_idx, t, eps, nees, iters, True,
                    f"error norm {np.linalg.norm(e):.3e} at t={t[j]:.2f}", seed,
                )
    except (DivergenceError, FilterNumericalError, np.linalg.LinAlgError) as err:
        return RunReport(
            variant.name, run_idx, t, eps, nees, iters, True, str(err), seed
        )
    return RunReport(variant.name, run_idx, t, eps, nees, iters, seed=seed)


def run_filter_stepwise(config, run, variant, n_meas=None):
    """Reference (slow) execution through the per-sample filter API; used to
    validate the composed fast path."""
    sys_model = ins.make_system_model(config)
    meas_model = ins.make_measurement_model(config)
    geo = ins.STATE_GEOMETRY
    spm = config.steps_per_meas
    n_meas = config.n_meas if n_meas is None else n_meas
    state = FilterState(
        geo.exp(run.truth[0], run.init_offset), ins.initial_covariance(config), 0
    )
    out = []
    for j in range(n_meas):
        for k in range(j * spm, (j + 1) * spm):
            u = np.concatenate([run.omega[k], run.accel[k]])
            y = run.measurements[j] if k == (j + 1) * spm - 1 else None
            state, _ = step(state, u, y, sys_model, meas_model, variant)
        out.append(state)
    return out


def _run_one(args):
    config, run_idx, seed_child, variant_names, mode, seed = args
    rng = np.random.default_rng(seed_child)
    run = ins.simulate_run(config, rng)
    pre = _precompute_epochs(config, run)
    meas_model = ins.make_measurement_model(config)
    cov0 = ins.initial_covariance(config)
    return [
        _run_variant(
            config, run, pre, VARIANTS[name], meas_model, cov0, run_idx, mode,
            seed,
        )
        for name in variant_names
    ]


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("GEOMEKF_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def monte_carlo(config, variants=None, runs=100, seed=0, workers=None,
                mode="closed_form"):
    """Run a paired Monte Carlo campaign and aggregate it.

    Every variant sees identical sensor streams and initial estimates within
    a run.  Divergent runs are excluded from the aggregates of the variant
    they diverged in and counted in the report.  Aggregation order is fixed
    by run index, so the result is independent of scheduling.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    variant_names = tuple(variants) if variants else DEFAULT_VARIANT_ORDER
    for name in variant_names:
        if name not in VARIANTS:
            raise KeyError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}")
    children = np.random.SeedSequence(seed).spawn(runs)
    jobs = [
        (config, i, children[i], variant_names, mode, seed) for i in range(runs)
    ]
    n_workers = _worker_count(workers)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            per_run = list(pool.map(_run_one, jobs, chunksize=1))
    else:
        per_run = [_run_one(j) for j in jobs]
    reports = [r for run_reports in per_run for r in run_reports]
    reports.sort(key=lambda r: (variant_names.index(r.variant), r.run_idx))
    agg = _aggregate(config, variant_names, reports, runs)
    return CampaignResult(config, seed, variant_names, reports, agg)


def _aggregate(config, variant_names, reports, runs):
    t = reports[0].t if reports else np.zeros(0)
    half = config.duration / 2.0
    phases = (
        ("transient", 0.0, half),
        ("asymptotic", half, config.duration),
    )
    rmse_table = {}
    anees_series = {}
    band_lo = {}
    band_hi = {}
    divergent = {}
    one_iter = {}
    for name in variant_names:
        group = sorted(
            (r for r in reports if r.variant == name), key=lambda r: r.run_idx
        )
        good = [r for r in group if not r.diverged]
        divergent[name] = len(group) - len(good)
        if not good:
            rmse_table[name] = {ph[0]: (np.nan, np.nan, np.nan) for ph in phases}
            anees_series[name] = np.full_like(t, np.nan)
            band_lo[name] = np.full_like(t, np.nan)
            band_hi[name] = np.full_like(t, np.nan)
            one_iter[name] = np.nan
            continue
        eps = np.stack([r.eps for r in good])       # (M, K, 9)
        nees = np.stack([r.nees for r in good])     # (M, K)
        rmse_table[name] = {}
        for ph_name, lo, hi in phases:
            sel = (t > lo) & (t <= hi) if lo > 0.0 else (t <= hi)
            rmse_table[name][ph_name] = (
                float(np.degrees(rmse(eps[:, sel, 0:3]))),
                float(rmse(eps[:, sel, 6:9])),
                float(rmse(eps[:, sel, 3:6])),
            )
        M_eff = eps.shape[0]
        anees_series[name] = nees.mean(axis=0) / 9.0
        lo_v, hi_v = chi2_band(9, M_eff)
        band_lo[name] = np.full_like(t, lo_v)
        band_hi[name] = np.full_like(t, hi_v)
        if VARIANTS[name].iterated:
            iters = np.concatenate([r.iterations for r in good])
            one_iter[name] = float(np.mean(iters <= 1))
        else:
            one_iter[name] = np.nan
    return AggregateReport(
        variants=variant_names,
        phases=phases,
        t=t,
        rmse_table=rmse_table,
        anees_series=anees_series,
        band_lo=band_lo,
        band_hi=band_hi,
        runs=runs,
        divergent=divergent,
        one_iter_fraction=one_iter,
    )


# ----------------------------------------------------------------------
# emission
# ----------------------------------------------------------------------

_SUMMARY_HEADER = "variant,phase,rmse_rot_deg,rmse_pos_m,rmse_vel_mps,pct_vs_baseline"


def _fmt(x):
    return repr(float(x))


def emit(campaign, format, outdir):
    """Write campaign output in one of ``csv | table | plot``.

    ``csv`` produces ``errors.csv`` (per run, per epoch local errors),
    ``anees.csv`` and ``summary.csv``; the latter two reconstruct the
    aggregate exactly (see :func:`aggregate_from_csv`).  ``pct_vs_baseline``
    is the position RMSE relative to the ``ekf`` row of the same phase, in
    percent.  ``plot`` renders the error-percentile and ANEES figures.
    """
    os.makedirs(outdir, exist_ok=True)
    agg = campaign.aggregate
    written = []
    if format == "csv":
        path = os.path.join(outdir, "errors.csv")
        with open(path, "w") as f:
            f.write("variant,run,t," + ",".join(f"eps_{i}" for i in range(1, 10)) + "\n")
            for r in campaign.runs:
                for j in range(r.t.shape[0]):
                    f.write(
                        f"{r.variant},{r.run_idx},{_fmt(r.t[j])},"
                        + ",".join(_fmt(x) for x in r.eps[j])
                        + "\n"
                    )
        written.append(path)

        path = os.path.join(outdir, "anees.csv")
        with open(path, "w") as f:
            f.write("variant,t,anees,band_lo,band_hi\n")
            for v in agg.variants:
                for j in range(agg.t.shape[0]):
                    f.write(
                        f"{v},{_fmt(agg.t[j])},{_fmt(agg.anees_series[v][j])},"
                        f"{_fmt(agg.band_lo[v][j])},{_fmt(agg.band_hi[v][j])}\n"
                    )
        written.append(path)

        path = os.path.join(outdir, "summary.csv")
        with open(path, "w") as f:
            f.write(_SUMMARY_HEADER + "\n")
            f.write(f"# runs={agg.runs} duration={_fmt(campaign.config.duration)}\n")
            for v in agg.variants:
                f.write(f"# divergent,{v},{agg.divergent[v]}\n")
            for v in agg.variants:
                for ph_name, _, _ in agg.phases:
                    rot, pos, vel = agg.rmse_table[v][ph_name]
                    base = agg.rmse_table.get("ekf", {}).get(ph_name)
                    pct = 100.0 * pos / base[1] if base and base[1] > 0 else np.nan
                    f.write(
                        f"{v},{ph_name},{_fmt(rot)},{_fmt(pos)},{_fmt(vel)},{_fmt(pct)}\n"
                    )
        written.append(path)
    elif format == "table":
        path = os.path.join(outdir, "summary.txt")
        with open(path, "w") as f:
            f.write(format_table(campaign))
        written.append(path)
    elif format == "plot":
        written.extend(_plot(campaign, outdir))
    else:
        raise ValueError(f"unknown emit format {format!r}")
    return written


def format_table(campaign):
    agg = campaign.aggregate
    lines = []
    for ph_name, lo, hi in agg.phases:
        lines.append(f"RMSE, {ph_name} phase ({lo:g}-{hi:g} s), {agg.runs} runs")
        lines.append(
            f"{'variant':14s} {'rot (deg)':>12s} {'pos (m)':>12s} {'vel (m/s)':>12s}"
            f" {'divergent':>10s}"
        )
        for v in agg.variants:
            rot, pos, vel = agg.rmse_table[v][ph_name]
            lines.append(
                f"{v:14s} {rot:12.4f} {pos:12.4f} {vel:12.4f} {agg.divergent[v]:>10d}"
            )
        lines.append("")
    return "\n".join(lines)


def _plot(campaign, outdir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = campaign.aggregate
    blocks = (("rotation (deg)", slice(0, 3), np.degrees),
              ("velocity (m/s)", slice(3, 6), lambda x: x),
              ("position (m)", slice(6, 9), lambda x: x))
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    colors = plt.get_cmap("tab10")
    for ax, (label, sl, conv) in zip(axes, blocks):
        for ci, v in enumerate(agg.variants):
            good = [r for r in campaign.runs if r.variant == v and not r.diverged]
            if not good:
                continue
            norms = conv(
                np.stack([np.linalg.norm(r.eps[:, sl], axis=1) for r in good])
            )
            med = np.median(norms, axis=0)
            q25 = np.percentile(norms, 25, axis=0)
            q75 = np.percentile(norms, 75, axis=0)
            ax.plot(agg.t, med, label=v, color=colors(ci))
            ax.fill_between(agg.t, q25, q75, color=colors(ci), alpha=0.2)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].legend(ncol=3, fontsize=8)
    axes[-1].set_xlabel("t (s)")
    err_path = os.path.join(outdir, "errors.png")
    fig.tight_layout()
    fig.savefig(err_path, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    for ci, v in enumerate(agg.variants):
        ax.plot(agg.t, agg.anees_series[v], label=v, color=colors(ci))
    ax.axhline(1.0, color="k", linestyle="--", linewidth=1)
    any_v = agg.variants[0]
    ax.fill_between(
        agg.t, agg.band_lo[any_v], agg.band_hi[any_v], color="k", alpha=0.1
    )
    ax.set_yscale("log")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("ANEES")
    ax.grid(alpha=0.3)
    ax.legend(ncol=3, fontsize=8)
    anees_path = os.path.join(outdir, "anees.png")
    fig.tight_layout()
    fig.savefig(anees_path, dpi=120)
    plt.close(fig)
    return [err_path, anees_path]


def aggregate_from_csv(outdir):
    """Rebuild the exact :class:`AggregateReport` written by ``emit(csv)``."""
    summary = os.path.join(outdir, "summary.csv")
    anees_path = os.path.join(outdir, "anees.csv")
    rmse_table = {}
    divergent = {}
    runs = 0
    duration = None
    with open(summary) as f:
        header = f.readline().strip()
        if header != _SUMMARY_HEADER:
            raise ValueError(f"unexpected summary header: {header}")
        for line in f:
            line = line.strip()
            if line.startswith("# runs="):
                body = line[2:].split()
                runs = int(body[0].split("=")[1])
                duration = float(body[1].split("=")[1])
                continue
            if line.startswith("# divergent,"):
                _, v, d = line[2:].split(",")
                divergent[v] = int(d)
                continue
            v, ph, rot, pos, vel, _pct = line.split(",")
            rmse_table.setdefault(v, {})[ph] = (float(rot), float(pos), float(vel))
    variants = tuple(rmse_table.keys())
    t_list = []
    anees_series = {v: [] for v in variants}
    band_lo = {v: [] for v in variants}
    band_hi = {v: [] for v in variants}
    with open(anees_path) as f:
        f.readline()
        for line in f:
            v, tv, a, lo, hi = line.strip().split(",")
            if v == variants[0]:
                t_list.append(float(tv))
            anees_series[v].append(float(a))
            band_lo[v].append(float(lo))
            band_hi[v].append(float(hi))
    t = np.array(t_list)
    half = duration / 2.0
    return AggregateReport(
        variants=variants,
        phases=(("transient", 0.0, half), ("asymptotic", half, duration)),
        t=t,
        rmse_table=rmse_table,
        anees_series={v: np.array(a) for v, a in anees_series.items()},
        band_lo={v: np.array(a) for v, a in band_lo.items()},
        band_hi={v: np.array(a) for v, a in band_hi.items()},
        runs=runs,
        divergent=divergent,
        one_iter_fraction={v: np.nan for v in variants},
    )
