"""Desk-scale run of the SE2(3) inertial-navigation benchmark.

Simulates a Lissajous trajectory with a bias-free IMU and noisy direct pose
measurements, runs the six-filter ablation grid on paired sensor streams,
and prints the RMSE table alongside the transient consistency numbers.
Increase ``RUNS`` (or use the ``geomekf bench`` command) for tighter
statistics; 100 runs take a few minutes.
"""

import os

import numpy as np

from geomekf import bench, ins

RUNS = 10

cfg = ins.TrajectoryConfig()  # 60 s at 200 Hz, pose measurements at 10 Hz
print(f"running {RUNS} paired Monte Carlo runs, "
      f"{len(bench.DEFAULT_VARIANT_ORDER)} filter variants ...")
campaign = bench.monte_carlo(cfg, runs=RUNS, seed=7)

print()
print(bench.format_table(campaign))

agg = campaign.aggregate
sel = agg.t <= cfg.duration / 2.0
print("transient mean ANEES (ideal value 1):")
for v in agg.variants:
    print(f"  {v:14s} {np.mean(agg.anees_series[v][sel]):8.2f}")

tr = {v: agg.rmse_table[v]["transient"] for v in agg.variants}
print()
print("headline ratios vs the classical EKF (transient position):")
for v in ("gekf", "gitekf", "gekf-update", "gekf-reset"):
    print(f"  {v:14s} {tr[v][1] / tr['ekf'][1]:.3f}")

out = os.path.join(os.path.dirname(__file__), "out")
paths = bench.emit(campaign, "plot", out)
print()
print("plots:", ", ".join(paths))
