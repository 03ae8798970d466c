"""Streaming regression data: synthetic generator, CSV ingestion, schedules.

Clients receive at most one sample per iteration. They are split into
data groups of different stream densities (default per-client totals
500/1000/1500/2000 over the horizon), so data is unevenly distributed
across the network. A noiseless test set evaluates the server model.
"""

import csv
from dataclasses import dataclass, field

import numpy as np


__all__ = [
    "SampleEvent",
    "StreamPlan",
    "TestSet",
    "StreamDataError",
    "MissingColumnError",
    "EmptyStreamError",
    "synth_target",
    "synth_inputs",
    "build_stream_plan",
    "build_test_set",
    "load_csv_stream",
    "dump_stream_plan",
]

DEFAULT_GROUP_SIZES = (500, 1000, 1500, 2000)


class StreamDataError(ValueError):
    """Problem with a data stream definition or source."""


class MissingColumnError(StreamDataError):
    """A requested CSV column does not exist."""


class EmptyStreamError(StreamDataError):
    """No usable rows remain after filtering."""


@dataclass(frozen=True)
class SampleEvent:
    """One sample arriving at one client at one iteration."""

    client_id: int
    iteration: int
    input: np.ndarray
    target: float


@dataclass(frozen=True)
class StreamPlan:
    """Per-client arrival schedule over the horizon.

    ``iterations[k]`` are the (strictly increasing) iterations at which
    client k receives a sample; ``inputs[k]`` and ``targets[k]`` hold the
    matching data rows. ``group_of`` maps clients to their data group.
    """

    horizon: int
    input_dim: int
    iterations: list
    inputs: list
    targets: list
    group_sizes: tuple
    group_of: np.ndarray
    _by_iteration: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_clients(self):
        return len(self.iterations)

    def client_events(self, k):
        """Ordered SampleEvents of client k."""
        return [
            SampleEvent(k, int(n), self.inputs[k][i], float(self.targets[k][i]))
            for i, n in enumerate(self.iterations[k])
        ]

    def events_at(self, n):
        """(client_ids, inputs, targets) arriving at iteration n."""
        if not self._by_iteration:
            self._build_index()
        return self._by_iteration.get(n, (_EMPTY_IDS, None, None))

    def _build_index(self):
        per_iter = {}
        for k in range(self.n_clients):
            for i, n in enumerate(self.iterations[k]):
                per_iter.setdefault(int(n), []).append((k, i))
        for n, pairs in per_iter.items():
            ks = np.array([k for k, _ in pairs], dtype=int)
            X = np.vstack([self.inputs[k][i] for k, i in pairs])
            y = np.array([self.targets[k][i] for k, i in pairs])
            self._by_iteration[n] = (ks, X, y)

    def total_samples(self):
        return sum(len(it) for it in self.iterations)


_EMPTY_IDS = np.empty(0, dtype=int)


@dataclass(frozen=True)
class TestSet:
    """Held-out evaluation data with cached feature embeddings."""

    __test__ = False  # not a pytest class despite the name

    inputs: np.ndarray
    targets: np.ndarray
    mapped_inputs: np.ndarray

    @property
    def size(self):
        return self.inputs.shape[0]


def synth_target(x, noise=0.0):
    """Nonlinear ground truth on R^4.

    y = sqrt(x1^2 + sin^2(pi*x4)) + 0.8 - 0.5*exp(-x2^2)*x3 + noise,
    with 1-based coordinate numbering.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (4,):
        raise ValueError(f"expected an input of shape (4,), got {x.shape}")
    return float(
        np.sqrt(x[0] ** 2 + np.sin(np.pi * x[3]) ** 2)
        + 0.8
        - 0.5 * np.exp(-(x[1] ** 2)) * x[2]
        + noise
    )


def _synth_target_batch(X, noise):
    return (
        np.sqrt(X[:, 0] ** 2 + np.sin(np.pi * X[:, 3]) ** 2)
        + 0.8
        - 0.5 * np.exp(-(X[:, 1] ** 2)) * X[:, 2]
        + noise
    )


def synth_inputs(rng, n, dim=4, low=-1.0, high=1.0):
    """I.i.d. uniform input draws for the synthetic task."""
    return rng.uniform(low, high, size=(n, dim))


def _schedule(count, horizon):
    """``count`` evenly spaced iterations in [0, horizon).

    Uses floor(j * horizon / count); reduces to one sample every
    horizon/count iterations whenever count divides horizon, and keeps
    the per-client totals exact otherwise.
    """
    if count > horizon:
        raise StreamDataError(
            f"cannot place {count} samples in a horizon of {horizon}"
        )
    j = np.arange(count)
    return (j * horizon) // count


def build_stream_plan(config, seed):
    """Synthetic streaming plan for all clients.

    ``config`` needs attributes ``n_clients``, ``group_sizes``,
    ``horizon``, ``input_dim`` and ``noise_std``. Clients are assigned to
    data groups in equal contiguous shares; samples are drawn i.i.d.
    uniform on [-1, 1]^4 with additive zero-mean Gaussian noise on the
    targets. Deterministic in (config, seed).
    """
    K = config.n_clients
    group_sizes = tuple(config.group_sizes)
    n_groups = len(group_sizes)
    if K % n_groups != 0:
        raise StreamDataError(
            f"n_clients={K} not divisible by the {n_groups} data groups"
        )
    horizon = config.horizon
    dim = config.input_dim
    if dim != 4:
        raise StreamDataError("the synthetic task is defined on R^4")
    noise_std = float(config.noise_std)

    rng = np.random.default_rng(seed)
    per_group = K // n_groups
    group_of = np.repeat(np.arange(n_groups), per_group)

    iterations, inputs, targets = [], [], []
    for k in range(K):
        count = group_sizes[group_of[k]]
        its = _schedule(count, horizon)
        X = synth_inputs(rng, count, dim)
        noise = rng.normal(0.0, noise_std, size=count)
        y = _synth_target_batch(X, noise)
        iterations.append(its)
        inputs.append(X)
        targets.append(y)
    return StreamPlan(
        horizon=horizon,
        input_dim=dim,
        iterations=iterations,
        inputs=inputs,
        targets=targets,
        group_sizes=group_sizes,
        group_of=group_of,
    )


def build_test_set(fm, config, seed):
    """Noiseless test set from the synthetic input distribution,
    mapped through the shared feature map."""
    T = config.test_size
    if T < 1:
        raise StreamDataError(f"test_size must be >= 1, got {T}")
    rng = np.random.default_rng(seed)
    X = synth_inputs(rng, T, config.input_dim)
    y = _synth_target_batch(X, 0.0)
    Z = fm.transform(X)
    return TestSet(inputs=X, targets=y, mapped_inputs=Z)


def _normalize(X, mode):
    if mode == "minmax":
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return 2.0 * (X - lo) / span - 1.0
    if mode == "zscore":
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return (X - mu) / sd
    raise StreamDataError(f"unknown normalization {mode!r}")


def _apportion(total, weights):
    """Integer quotas proportional to weights, summing exactly to total
    (largest remainder method)."""
    weights = np.asarray(weights, dtype=float)
    raw = total * weights / weights.sum()
    quotas = np.floor(raw).astype(int)
    short = total - quotas.sum()
    order = np.argsort(-(raw - quotas), kind="stable")
    quotas[order[:short]] += 1
    return quotas


def load_csv_stream(
    path,
    feature_columns,
    target_column,
    normalization="minmax",
    *,
    fm,
    n_clients,
    group_proportions=DEFAULT_GROUP_SIZES,
    test_fraction=0.1,
    seed=0,
):
    """Ingest an external CSV regression stream.

    Rows with missing or non-numeric values in the requested columns are
    dropped. Features are normalized per column (min-max to [-1, 1] or
    z-score). Rows are shuffled with the seed, a test fraction is held
    out, and the remainder is distributed progressively and unevenly to
    the clients with per-client quotas following ``group_proportions``.

    Returns (StreamPlan, TestSet); test targets keep their raw scale.
    """
    rows = []
    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise
    with f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in list(feature_columns) + [target_column] if c not in header]
        if missing:
            raise MissingColumnError(f"columns not in CSV header: {missing}")
        for rec in reader:
            try:
                feats = [float(rec[c]) for c in feature_columns]
                tgt = float(rec[target_column])
            except (TypeError, ValueError):
                continue
            if any(np.isnan(feats)) or np.isnan(tgt):
                continue
            rows.append(feats + [tgt])
    if not rows:
        raise EmptyStreamError(f"no usable rows in {path}")

    data = np.asarray(rows, dtype=float)
    X = _normalize(data[:, :-1], normalization)
    y = data[:, -1]
    dim = X.shape[1]

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(y))
    X, y = X[perm], y[perm]

    n_test = int(round(len(y) * test_fraction))
    X_test, y_test = X[:n_test], y[:n_test]
    X_stream, y_stream = X[n_test:], y[n_test:]
    if len(y_stream) < n_clients:
        raise EmptyStreamError(
            f"{len(y_stream)} streamed rows cannot feed {n_clients} clients"
        )

    n_groups = len(group_proportions)
    if n_clients % n_groups != 0:
        raise StreamDataError(
            f"n_clients={n_clients} not divisible by the {n_groups} data groups"
        )
    per_group = n_clients // n_groups
    group_of = np.repeat(np.arange(n_groups), per_group)
    client_weights = np.asarray(group_proportions, dtype=float)[group_of]
    quotas = _apportion(len(y_stream), client_weights)
    horizon = int(quotas.max())

    iterations, inputs, targets = [], [], []
    start = 0
    for k in range(n_clients):
        q = int(quotas[k])
        iterations.append(_schedule(q, horizon) if q else np.empty(0, dtype=int))
        inputs.append(X_stream[start : start + q])
        targets.append(y_stream[start : start + q])
        start += q
    plan = StreamPlan(
        horizon=horizon,
        input_dim=dim,
        iterations=iterations,
        inputs=inputs,
        targets=targets,
        group_sizes=tuple(int(q) for q in np.bincount(group_of, quotas)),
        group_of=group_of,
    )
    test = TestSet(
        inputs=X_test, targets=y_test, mapped_inputs=fm.transform(X_test)
    )
    return plan, test


def dump_stream_plan(plan, path):
    """Deterministic text dump of a plan for debugging."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("client,iteration,target,input...\n")
        for k in range(plan.n_clients):
            for i, n in enumerate(plan.iterations[k]):
                coords = ",".join(f"{v:.10g}" for v in plan.inputs[k][i])
                f.write(f"{k},{int(n)},{plan.targets[k][i]:.10g},{coords}\n")
