#!/usr/bin/env python3
"""Desk-scale comparison of the federated algorithms.

Runs the asynchronous default preset (Bernoulli participation, geometric
delays) at desk scale and prints learning curves plus communication
accounting. Saves a PNG when matplotlib is importable. Expect roughly a
minute of compute.
"""
import numpy as np

from paofed.harness import experiment_summary, preset, run_experiment

cfg = preset(
    "default-async",
    algorithms=("pao-fed-u1", "pao-fed-u2", "pao-fed-c2",
                "online-fed", "online-fedsgd", "pso-fed"),
    n_clients=32,
    rff_dim=64,
    horizon=2000,
    mc_runs=10,
    metric_stride=100,
    test_size=1000,
    noise_std=0.31622776601683794,
    mu=0.8,
    mu_overrides={"online-fed": 1.2},
)
print(f"preset: default-async at desk scale "
      f"(K={cfg.n_clients}, D={cfg.rff_dim}, N={cfg.horizon}, MC={cfg.mc_runs})")
print(f"budget-matched subset for Online-Fed / PSO-Fed: "
      f"{cfg.effective_subset_size()} clients per iteration\n")

tables = run_experiment(cfg)

pts = next(iter(tables.values())).iterations
cols = list(tables)
print("test MSE (dB) over iterations:")
print("  iter " + "".join(f"{c.replace('pao-fed-', ''):>14s}" for c in cols))
for i in range(0, len(pts), 4):
    print(f"  {int(pts[i]):4d} " + "".join(f"{tables[c].mse_db[i]:14.2f}" for c in cols))

summary = experiment_summary(cfg, tables)
print("\nfinal metrics:")
for name, entry in sorted(summary["algorithms"].items(),
                          key=lambda kv: kv[1]["final_mse_db"]):
    print(f"  {name:16s} {entry['final_mse_db']:+7.2f} dB   "
          f"uplink {entry['uplink_params']:>9d} params "
          f"(x{entry['uplink_ratio_vs_full']:.3f} of a full model per message)")
print(f"\nstep-size bounds from the empirical feature correlation: "
      f"mean {summary['bounds']['mean_bound']:.2f}, "
      f"mean-square {summary['bounds']['ms_bound']:.2f}")
print("partial sharing moves 2-6% of the traffic of Online-FedSGD at a "
      "comparable (or better) final error; the subsampled baselines trail by "
      "several dB in this environment.")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, tab in tables.items():
        ax.plot(tab.iterations, tab.mse_db, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("test MSE (dB)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig("compare_algorithms.png", dpi=120)
    print("\nlearning curves saved to compare_algorithms.png")
