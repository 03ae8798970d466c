"""Experiment configuration, Monte-Carlo orchestration, and metrics.

A run evaluates several algorithms against identical data, availability,
and delay realizations (common random numbers), repeats over Monte-Carlo
runs with per-run substreams, and reports the test MSE curve per
algorithm together with exact uplink/downlink parameter counts.
"""

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algorithms import ALGORITHM_NAMES, make_algorithm, IterationBatch
from .analysis import estimate_correlation, largest_eigenvalue, step_size_bounds
from .environment import DelayModel, EventTrace, sample_delays
from .features import build_feature_map, median_kernel_width
from .seeding import substream
from .streams import build_stream_plan, build_test_set, synth_inputs

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "MetricsRecord",
    "MetricsTable",
    "PRESET_NAMES",
    "preset",
    "mse_test",
    "run_experiment",
    "sweep",
    "experiment_summary",
    "stability_flag",
    "calibrate_learning_rates",
    "write_outputs",
]

PARAM_ALIASES = {
    "m": "mask_size",
    "K": "n_clients",
    "D": "rff_dim",
    "L": "input_dim",
    "N": "horizon",
    "delta": "delay_tail",
    "l_max": "delay_cutoff",
    "g": "delay_step",
    "T": "test_size",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; lists every violation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class ExperimentConfig:
    """Full description of one experiment arm.

    All defaults reproduce the reference asynchronous setup: 256 clients
    in four data groups (500/1000/1500/2000 samples over 2000 iterations)
    times four availability groups, feature dimension 200 with 4 shared
    parameters per message, delay tail 0.2 with cutoff 10.
    """

    n_clients: int = 256
    rff_dim: int = 200
    input_dim: int = 4
    mask_size: int = 4
    horizon: int = 2000
    mu: float = 0.4
    mu_overrides: dict = field(default_factory=dict)
    algorithms: tuple = ("pao-fed-u1", "pao-fed-u2", "online-fedsgd")
    availability_probs: tuple = (0.25, 0.1, 0.025, 0.005)
    group_sizes: tuple = (500, 1000, 1500, 2000)
    delay_tail: float = 0.2
    delay_cutoff: int = 10
    delay_step: int = 1
    weight_base: float = 0.2
    noise_std: float = 0.1
    kernel_width: float = None
    seed: int = 1
    feature_map_seed: int = 7
    mc_runs: int = 50
    test_size: int = 2000
    subset_size: int = None
    full_downlink: bool = False
    straggler_fraction: float = 1.0
    mask_mode: str = "rotating"
    metric_stride: int = 1
    workers: int = 1
    output_dir: str = None
    trace_dir: str = None

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        self.availability_probs = tuple(self.availability_probs)
        self.group_sizes = tuple(self.group_sizes)
        self.mu_overrides = dict(self.mu_overrides)

    def validate(self):
        """Raise ConfigError listing all violations, or return self."""
        v = []
        cells = len(self.group_sizes) * len(self.availability_probs)
        if self.n_clients < 1:
            v.append(f"n_clients must be >= 1, got {self.n_clients}")
        elif self.n_clients % cells:
            v.append(
                f"n_clients={self.n_clients} must be divisible by "
                f"{cells} (data groups x availability groups)"
            )
        if self.rff_dim < 1:
            v.append(f"rff_dim must be >= 1, got {self.rff_dim}")
        if self.input_dim < 1:
            v.append(f"input_dim must be >= 1, got {self.input_dim}")
        if not 1 <= self.mask_size <= self.rff_dim:
            v.append(f"mask_size must lie in [1, rff_dim], got {self.mask_size}")
        if self.horizon < 1:
            v.append(f"horizon must be >= 1, got {self.horizon}")
        if not self.mu > 0:
            v.append(f"mu must be > 0, got {self.mu}")
        for name, m in self.mu_overrides.items():
            if not m > 0:
                v.append(f"mu override for {name} must be > 0, got {m}")
        for name in self.algorithms:
            if name not in ALGORITHM_NAMES:
                v.append(f"unknown algorithm {name!r}")
        if len(set(self.algorithms)) != len(self.algorithms):
            v.append("duplicate algorithm names")
        for p in self.availability_probs:
            if not 0.0 <= p <= 1.0:
                v.append(f"availability probability {p} outside [0, 1]")
        for s in self.group_sizes:
            if not 0 <= s <= self.horizon:
                v.append(f"group size {s} outside [0, horizon={self.horizon}]")
        if not 0.0 <= self.delay_tail < 1.0:
            v.append(f"delay_tail must lie in [0, 1), got {self.delay_tail}")
        if self.delay_cutoff < 0:
            v.append(f"delay_cutoff must be >= 0, got {self.delay_cutoff}")
        if self.delay_step < 1:
            v.append(f"delay_step must be >= 1, got {self.delay_step}")
        if not 0.0 <= self.weight_base <= 1.0:
            v.append(f"weight_base must lie in [0, 1], got {self.weight_base}")
        if self.noise_std < 0:
            v.append(f"noise_std must be >= 0, got {self.noise_std}")
        if self.kernel_width is not None and not self.kernel_width > 0:
            v.append(f"kernel_width must be > 0, got {self.kernel_width}")
        if self.mc_runs < 1:
            v.append(f"mc_runs must be >= 1, got {self.mc_runs}")
        if self.test_size < 1:
            v.append(f"test_size must be >= 1, got {self.test_size}")
        if self.subset_size is not None and not 0 <= self.subset_size <= self.n_clients:
            v.append(f"subset_size must lie in [0, n_clients], got {self.subset_size}")
        if not 0.0 <= self.straggler_fraction <= 1.0:
            v.append(f"straggler_fraction outside [0, 1]: {self.straggler_fraction}")
        if self.mask_mode not in ("rotating", "random"):
            v.append(f"unknown mask_mode {self.mask_mode!r}")
        if self.metric_stride < 1:
            v.append(f"metric_stride must be >= 1, got {self.metric_stride}")
        if self.workers < 1:
            v.append(f"workers must be >= 1, got {self.workers}")
        if v:
            raise ConfigError(v)
        return self

    # ---- derived quantities ----------------------------------------

    def algorithm_mu(self, name):
        return float(self.mu_overrides.get(name, self.mu))

    def effective_subset_size(self):
        """Subset size matching the partial-sharing uplink budget."""
        if self.subset_size is not None:
            return self.subset_size
        return math.ceil(self.n_clients * self.mask_size / self.rff_dim)

    def delay_model(self):
        return DelayModel(self.delay_tail, self.delay_cutoff, self.delay_step)

    def client_probabilities(self):
        """Per-client participation probability (before the data gate)."""
        K = self.n_clients
        per_data = K // len(self.group_sizes)
        per_cell = per_data // len(self.availability_probs)
        probs = np.empty(K)
        for k in range(K):
            cell = (k % per_data) // per_cell
            probs[k] = self.availability_probs[cell]
        probs[~self.straggler_clients()] = 1.0
        return probs

    def straggler_clients(self):
        """Boolean mask of clients with asynchronous behavior, spread
        evenly over every (data group, availability group) cell."""
        K = self.n_clients
        per_data = K // len(self.group_sizes)
        per_cell = per_data // len(self.availability_probs)
        n_strag = int(round(self.straggler_fraction * per_cell))
        flags = np.zeros(K, dtype=bool)
        for k in range(K):
            flags[k] = (k % per_cell) < n_strag
        return flags

    def resolve_kernel_width(self):
        """Configured width, or the median heuristic on a fixed probe."""
        if self.kernel_width is not None:
            return self.kernel_width
        probe_rng = substream(self.feature_map_seed, 0, "kernel-width-probe")
        probe = synth_inputs(probe_rng, 256, self.input_dim)
        return median_kernel_width(probe)

    def feature_map(self):
        return build_feature_map(
            self.feature_map_seed,
            self.input_dim,
            self.rff_dim,
            self.resolve_kernel_width(),
        )

    # ---- serialization ----------------------------------------------

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError([f"unknown config field {k!r}" for k in sorted(unknown)])
        cfg = cls(**d)
        for name, value in list(cfg.mu_overrides.items()):
            cfg.mu_overrides[name] = float(value)
        return cfg

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as f:
                f.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source):
        if os.path.exists(source):
            with open(source, "r", encoding="utf-8") as f:
                d = json.load(f)
        else:
            d = json.loads(source)
        return cls.from_dict(d)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


PRESET_NAMES = (
    "default-async",
    "heavy-delay",
    "sparse-delayed",
    "full-downlink",
    "ideal",
)


def preset(name, scale=1.0, **overrides):
    """Named experiment configuration, optionally shrunk for desk runs.

    The scale factor shrinks the client count, horizon, and per-client
    group sample totals proportionally (floor rounding; the client count
    is floored to a multiple of the group-cell count).
    """
    base = dict(algorithms=(
        "pao-fed-u1",
        "pao-fed-u2",
        "pao-fed-c1",
        "pao-fed-c2",
        "online-fed",
        "online-fedsgd",
        "pso-fed",
    ))
    if name == "default-async":
        cfg = ExperimentConfig(**base)
    elif name == "heavy-delay":
        cfg = ExperimentConfig(delay_tail=0.8, delay_cutoff=5, **base)
    elif name == "sparse-delayed":
        cfg = ExperimentConfig(
            availability_probs=(0.025, 0.01, 0.0025, 0.0005),
            delay_tail=0.4,
            delay_cutoff=60,
            delay_step=10,
            **base,
        )
    elif name == "full-downlink":
        cfg = ExperimentConfig(full_downlink=True, **base)
    elif name == "ideal":
        cfg = ExperimentConfig(straggler_fraction=0.0, **base)
    else:
        raise ConfigError([f"unknown preset {name!r}; choose from {PRESET_NAMES}"])
    if scale != 1.0:
        if not 0 < scale <= 1:
            raise ConfigError([f"scale must lie in (0, 1], got {scale}"])
        cells = len(cfg.group_sizes) * len(cfg.availability_probs)
        K = max(cells, int(cfg.n_clients * scale) // cells * cells)
        N = max(1, int(cfg.horizon * scale))
        sizes = tuple(min(N, int(s * scale)) for s in cfg.group_sizes)
        cfg = cfg.replace(n_clients=K, horizon=N, group_sizes=sizes)
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg.validate()


@dataclass(frozen=True)
class MetricsRecord:
    """One reported row of one algorithm's learning curve."""

    algorithm: str
    iteration: int
    mse_test_db: float
    cumulative_uplink_params: int
    cumulative_downlink_params: int


@dataclass
class MetricsTable:
    """Per-algorithm learning curve after Monte-Carlo averaging.

    ``mse`` is the run-averaged linear test MSE; parameter counters are
    totals over all Monte-Carlo runs and are non-decreasing.
    """

    algorithm: str
    iterations: np.ndarray
    mse: np.ndarray
    uplink_params: np.ndarray
    downlink_params: np.ndarray

    @property
    def mse_db(self):
        return 10.0 * np.log10(self.mse)

    @property
    def final_mse_db(self):
        return float(self.mse_db[-1])

    def records(self):
        return [
            MetricsRecord(
                self.algorithm,
                int(self.iterations[i]),
                float(self.mse_db[i]),
                int(self.uplink_params[i]),
                int(self.downlink_params[i]),
            )
            for i in range(len(self.iterations))
        ]

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("algorithm,iteration,mse_test_db,uplink_params,downlink_params\n")
            for r in self.records():
                f.write(
                    f"{r.algorithm},{r.iteration},{r.mse_test_db:.6f},"
                    f"{r.cumulative_uplink_params},{r.cumulative_downlink_params}\n"
                )


def mse_test(server_model, test_set):
    """Test MSE of one model: ||y - Z w||^2 / T."""
    resid = test_set.targets - test_set.mapped_inputs @ server_model
    return float(resid @ resid / test_set.size)


def _metric_iterations(config):
    pts = np.arange(0, config.horizon, config.metric_stride)
    if pts[-1] != config.horizon - 1:
        pts = np.append(pts, config.horizon - 1)
    return pts


def _run_single(config, fm, run_idx):
    """One Monte-Carlo run: every algorithm sees the identical data,
    availability, and delay realizations."""
    K, N = config.n_clients, config.horizon
    plan = build_stream_plan(config, substream(config.seed, run_idx, "data"))
    test = build_test_set(fm, config, substream(config.seed, run_idx, "test"))

    probs = config.client_probabilities()
    uniforms = substream(config.seed, run_idx, "availability").random((K, N))
    avail = uniforms < probs[:, None]
    delays = sample_delays(
        config.delay_model(), (K, N), substream(config.seed, run_idx, "delay")
    )
    delays[~config.straggler_clients(), :] = 0

    selection_seed = substream(config.seed, run_idx, "selection").integers(2**31)
    algs = [
        make_algorithm(
            name,
            n_clients=K,
            dim=config.rff_dim,
            m=config.mask_size,
            mu=config.algorithm_mu(name),
            delay_cutoff=config.delay_cutoff,
            subset_size=config.effective_subset_size(),
            selection_rng=np.random.default_rng(int(selection_seed)),
            mask_mode=config.mask_mode,
            mask_seed=config.feature_map_seed,
            full_downlink=config.full_downlink,
            weight_base=config.weight_base,
        )
        for name in config.algorithms
    ]
    if config.trace_dir is not None:
        for alg in algs:
            alg.trace = EventTrace()

    points = _metric_iterations(config)
    n_pts = len(points)
    mse = {a.name: np.zeros(n_pts) for a in algs}
    up = {a.name: np.zeros(n_pts, dtype=np.int64) for a in algs}
    down = {a.name: np.zeros(n_pts, dtype=np.int64) for a in algs}

    point_set = set(int(p) for p in points)
    row = 0
    for n in range(N):
        ids, X, y = plan.events_at(n)
        if len(ids):
            Z = fm.transform(X)
            batch = IterationBatch(
                iteration=n,
                clients=ids,
                features=Z,
                targets=y,
                available=avail[ids, n],
                delays=delays[ids, n],
            )
        else:
            batch = IterationBatch(
                iteration=n,
                clients=ids,
                features=np.empty((0, config.rff_dim)),
                targets=np.empty(0),
                available=np.empty(0, dtype=bool),
                delays=np.empty(0, dtype=int),
            )
        for alg in algs:
            alg.step(batch)
        if n in point_set:
            for alg in algs:
                mse[alg.name][row] = mse_test(alg.server_model, test)
                up[alg.name][row] = alg.uplink_params
                down[alg.name][row] = alg.downlink_params
            row += 1
    if config.trace_dir is not None:
        os.makedirs(config.trace_dir, exist_ok=True)
        for alg in algs:
            alg.trace.write_csv(
                os.path.join(config.trace_dir, f"{alg.name}__run{run_idx}.csv")
            )
    return mse, up, down


def _run_single_star(args):
    return _run_single(*args)


def run_experiment(config):
    """Monte-Carlo averaged metric tables, one per algorithm.

    Deterministic in (config.seed, config.mc_runs); Monte-Carlo runs are
    independent and merged in run-index order.
    """
    config.validate()
    fm = config.feature_map()
    points = _metric_iterations(config)
    tasks = [(config, fm, r) for r in range(config.mc_runs)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_single_star, tasks))
    else:
        results = [_run_single(*t) for t in tasks]

    tables = {}
    for name in config.algorithms:
        mse = np.mean([res[0][name] for res in results], axis=0)
        up = np.sum([res[1][name] for res in results], axis=0)
        down = np.sum([res[2][name] for res in results], axis=0)
        tables[name] = MetricsTable(name, points.copy(), mse, up, down)
    return tables


def stability_flag(mu, ms_bound):
    """Classify a step size against the mean-square stability bound."""
    if mu <= ms_bound:
        return "ms-stable"
    if mu <= 2.0 * ms_bound:
        return "mean-stable"
    if mu < 4.0 * ms_bound:
        return "above-bounds"
    return "flagged-4x-bound"


def empirical_bounds(config, n_probe=100_000):
    """Step-size bounds from the empirical feature correlation, estimated
    over a large mapped probe from the input distribution."""
    fm = config.feature_map()
    rng = substream(config.feature_map_seed, 0, "correlation-probe")
    X = synth_inputs(rng, n_probe, config.input_dim)
    R = estimate_correlation(fm, X)
    lam = largest_eigenvalue(R)
    mean_bound, ms_bound = step_size_bounds([R])
    return {"max_eigenvalue": lam, "mean_bound": mean_bound, "ms_bound": ms_bound}


def experiment_summary(config, tables, bounds=None):
    """Final metrics plus stability diagnostics, JSON-serializable."""
    if bounds is None:
        bounds = empirical_bounds(config)
    ref = tables.get("online-fedsgd")
    summary = {
        "config": config.to_dict(),
        "bounds": bounds,
        "algorithms": {},
    }
    for name, tab in tables.items():
        mu = config.algorithm_mu(name)
        per_msg = config.rff_dim if name in ("online-fed", "online-fedsgd") else config.mask_size
        entry = {
            "final_mse_db": tab.final_mse_db,
            "uplink_params": int(tab.uplink_params[-1]),
            "downlink_params": int(tab.downlink_params[-1]),
            "params_per_uplink_message": per_msg,
            "uplink_ratio_vs_full": per_msg / config.rff_dim,
            "mu": mu,
            "stability_flag": stability_flag(mu, bounds["ms_bound"]),
        }
        if ref is not None and int(ref.uplink_params[-1]) > 0:
            entry["uplink_ratio_vs_online_fedsgd"] = (
                int(tab.uplink_params[-1]) / int(ref.uplink_params[-1])
            )
        summary["algorithms"][name] = entry
    return summary


def sweep(config, param, values):
    """Re-run the experiment for each value of one parameter.

    Returns (results, summary_rows): results maps value -> metric tables;
    summary rows carry the final MSE per algorithm, the uplink ratio
    m/D, and the step-size stability flag.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    name = PARAM_ALIASES.get(param, param)
    if name not in {f.name for f in dataclasses.fields(ExperimentConfig)}:
        raise ConfigError([f"unknown sweep parameter {param!r}"])
    bounds = None
    results, rows = {}, []
    for value in values:
        cfg = config.replace(**{name: value}).validate()
        tables = run_experiment(cfg)
        if bounds is None or name in ("rff_dim", "kernel_width", "feature_map_seed", "input_dim"):
            bounds = empirical_bounds(cfg)
        results[value] = tables
        row = {
            "param": name,
            "value": value,
            "mc_runs": cfg.mc_runs,
            "uplink_ratio_vs_full": cfg.mask_size / cfg.rff_dim,
        }
        for alg, tab in tables.items():
            row[f"final_mse_db[{alg}]"] = tab.final_mse_db
            row[f"stability_flag[{alg}]"] = stability_flag(
                cfg.algorithm_mu(alg), bounds["ms_bound"]
            )
        rows.append(row)
    return results, rows


def calibrate_learning_rates(
    config,
    grid,
    reference="online-fedsgd",
    drop_db=3.0,
    tolerance=0.1,
    mc_runs=5,
):
    """Grid-search step sizes giving each algorithm the reference's
    initial convergence rate.

    The rate is summarized by the first iteration at which the test MSE
    drops ``drop_db`` below its initial value; a candidate step size
    matches when that iteration is within ``tolerance`` (relative) of the
    reference's. Returns (mu_overrides, diagnostics).
    """

    def drop_iteration(table):
        db = table.mse_db
        target = db[0] - drop_db
        hits = np.nonzero(db <= target)[0]
        return int(table.iterations[hits[0]]) if len(hits) else None

    base = config.replace(mc_runs=mc_runs, metric_stride=1)
    ref_cfg = base.replace(algorithms=(reference,))
    ref_iter = drop_iteration(run_experiment(ref_cfg)[reference])
    if ref_iter is None:
        raise RuntimeError(
            f"reference {reference} never dropped {drop_db} dB; cannot calibrate"
        )
    overrides, diag = {}, {"reference": reference, "target_iteration": ref_iter}
    for name in config.algorithms:
        if name == reference:
            continue
        best, best_err = None, np.inf
        for mu in grid:
            cfg = base.replace(
                algorithms=(name,), mu_overrides={**base.mu_overrides, name: mu}
            )
            it = drop_iteration(run_experiment(cfg)[name])
            if it is None:
                continue
            err = abs(it - ref_iter) / ref_iter
            if err < best_err:
                best, best_err = mu, err
        diag[name] = {"mu": best, "relative_error": best_err}
        if best is not None and best_err <= tolerance:
            overrides[name] = best
    return overrides, diag


def write_outputs(config, tables, summary, out_dir):
    """Per-algorithm CSV curves plus a JSON summary."""
    os.makedirs(out_dir, exist_ok=True)
    for name, tab in tables.items():
        tab.write_csv(os.path.join(out_dir, f"{name}.csv"))
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True, default=float)
    return out_dir
