"""Command-line front end.

Subcommands: run, sweep, predict-msd, compare, preset. Errors exit
nonzero with a machine-readable category on stderr
(``error:<category>: message``); exit codes: 2 config, 3 io, 4 analysis.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import analysis
from .environment import DelayModel
from .harness import (
    ConfigError,
    ExperimentConfig,
    PRESET_NAMES,
    empirical_bounds,
    experiment_summary,
    preset,
    run_experiment,
    sweep,
    write_outputs,
)

_EXIT_CONFIG = 2
_EXIT_IO = 3
_EXIT_ANALYSIS = 4

# Beyond this extended dimension the block-Kronecker moments stop being
# desk-scale; refuse rather than thrash.
_MAX_EXTENDED_DIM = 100


def _fail(category, message, code):
    print(f"error:{category}: {message}", file=sys.stderr)
    return code


def _load_config(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return ExperimentConfig.from_json(path).validate()


def _parse_values(raw):
    vals = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            vals.append(int(tok))
        except ValueError:
            vals.append(float(tok))
    return vals


def cmd_run(args):
    config = _load_config(args.config)
    tables = run_experiment(config)
    summary = experiment_summary(config, tables)
    out = args.output or config.output_dir or "paofed-out"
    write_outputs(config, tables, summary, out)
    for name, tab in tables.items():
        print(f"{name}: final mse {tab.final_mse_db:.2f} dB, "
              f"uplink {int(tab.uplink_params[-1])} params")
    print(f"outputs written to {out}")
    return 0


def cmd_sweep(args):
    config = _load_config(args.config)
    values = _parse_values(args.values)
    results, rows = sweep(config, args.param, values)
    out = args.output or config.output_dir or "paofed-sweep"
    os.makedirs(out, exist_ok=True)
    for value, tables in results.items():
        for name, tab in tables.items():
            tab.write_csv(os.path.join(out, f"{name}__{args.param}={value}.csv"))
    with open(os.path.join(out, "sweep.json"), "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2, default=float)
    for row in rows:
        finals = {k: v for k, v in row.items() if k.startswith("final")}
        print(f"{row['param']}={row['value']}: {finals}")
    print(f"outputs written to {out}")
    return 0


def cmd_predict_msd(args):
    config = _load_config(args.config)
    K, D = config.n_clients, config.rff_dim
    ext_dim = (1 + K * (config.delay_cutoff + 2)) * D
    if ext_dim > _MAX_EXTENDED_DIM:
        raise analysis.NoSteadyStateError(
            f"extended dimension {ext_dim} exceeds the desk-scale limit "
            f"{_MAX_EXTENDED_DIM}; shrink K, D, or the delay cutoff"
        )
    fm = config.feature_map()
    rng = np.random.default_rng(config.seed)
    probe = rng.uniform(-1.0, 1.0, size=(args.probe, config.input_dim))
    R = analysis.estimate_correlation(fm, probe)
    sys_ = analysis.ExtendedSystem(
        corr=np.tile(R, (K, 1, 1)),
        participation=config.client_probabilities(),
        mask_size=config.mask_size,
        weights=config.weight_base ** np.arange(config.delay_cutoff + 1),
        delay=DelayModel(config.delay_tail, config.delay_cutoff, config.delay_step),
        noise_variances=np.full(K, config.noise_std**2),
    )
    Q_A, Q_B = analysis.estimate_Q(sys_, args.samples, rng)
    F = analysis.build_F(sys_, config.mu, Q_A, Q_B)
    h = analysis.build_h(sys_, Q_B)
    rho = analysis.spectral_radius(F)
    mean_bound, ms_bound = analysis.step_size_bounds([R])
    w_star = np.full(config.rff_dim, args.target_norm / np.sqrt(config.rff_dim))
    curve = analysis.msd_transient(
        sys_, config.mu, Q_A, Q_B, h, args.iters,
        sys_.extended_target(w_star), F=F,
    )
    steady = (
        analysis.msd_steady_state(sys_, config.mu, Q_A, Q_B, h, F=F)
        if rho < 1.0
        else None
    )
    out = args.output or config.output_dir or "paofed-msd"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "msd.csv"), "w", encoding="utf-8") as f:
        f.write("iteration,predicted_msd\n")
        for i, v in enumerate(curve):
            f.write(f"{i},{v:.8e}\n")
    summary = {
        "spectral_radius": rho,
        "mean_bound": mean_bound,
        "ms_bound": ms_bound,
        "steady_state_msd": steady,
        "mu": config.mu,
        "q_samples": args.samples,
    }
    with open(os.path.join(out, "msd-summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, default=float)
    print(f"rho(F)={rho:.6f}, bounds=({mean_bound:.4f}, {ms_bound:.4f}), "
          f"steady-state MSD={steady}")
    print(f"outputs written to {out}")
    return 0


def cmd_compare(args):
    config = _load_config(args.config)
    names = tuple(a.strip() for a in args.algorithms.split(",") if a.strip())
    config = config.replace(algorithms=names).validate()
    tables = run_experiment(config)
    summary = experiment_summary(config, tables, bounds=empirical_bounds(config))
    out = args.output or config.output_dir or "paofed-compare"
    write_outputs(config, tables, summary, out)
    ranked = sorted(tables.items(), key=lambda kv: kv[1].final_mse_db)
    for name, tab in ranked:
        print(f"{name}: final mse {tab.final_mse_db:.2f} dB")
    print(f"outputs written to {out}")
    return 0


def cmd_preset(args):
    config = preset(args.name, scale=args.scale)
    text = config.to_json(args.output)
    if args.output:
        print(f"preset written to {args.output}")
    else:
        print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="paofed",
        description="Partial-sharing asynchronous online federated learning "
        "simulator and analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one parameter over values")
    p.add_argument("config")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("predict-msd", help="theoretical MSD prediction")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=400,
                   help="Monte-Carlo samples for the second moments")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--probe", type=int, default=20000)
    p.add_argument("--target-norm", type=float, default=1.0)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_predict_msd)

    p = sub.add_parser("compare", help="run selected algorithms head to head")
    p.add_argument("config")
    p.add_argument("--algorithms", required=True, help="comma-separated names")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("preset", help="emit a named preset config")
    p.add_argument("name", choices=PRESET_NAMES)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), _EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _fail("io", str(exc), _EXIT_IO)
    except analysis.NoSteadyStateError as exc:
        return _fail("analysis", str(exc), _EXIT_ANALYSIS)
    except ValueError as exc:
        return _fail("config", str(exc), _EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
