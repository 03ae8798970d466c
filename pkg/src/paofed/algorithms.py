"""Server/client state machines: PAO-Fed variants and baselines.

All algorithms learn a D-dimensional linear model in the shared feature
space with LMS steps of rate mu. The partial-sharing family exchanges
only m of the D parameters per message, selected by rotating masks;
PAO-Fed additionally aggregates delay-partitioned arrivals with
per-delay weights. Baselines: Online-Fed (client subsampling, full
models), Online-FedSGD (all clients, full models), and PSO-Fed (partial
sharing with subsampling, delays ignored at the server).
"""

from dataclasses import dataclass, replace

import numpy as np

from .environment import InFlightMessage, MessageQueue, resolve_conflicts

__all__ = [
    "VariantConfig",
    "PAO_FED_VARIANTS",
    "ALGORITHM_NAMES",
    "MaskScheduler",
    "advance_masks",
    "uplink_mask",
    "client_step_available",
    "client_step_autonomous",
    "compute_deviation",
    "server_aggregate",
    "aggregation_weights",
    "IterationBatch",
    "PaoFed",
    "OnlineFed",
    "PsoFed",
    "make_algorithm",
]


@dataclass(frozen=True)
class VariantConfig:
    """Behavioral switches distinguishing the PAO-Fed versions.

    coordinated:
        All clients share one mask per iteration, or per-client offsets.
    uplink_rule:
        "echo" sends back the portion just received (version 0);
        "shifted" sends the next downlink portion, carrying parameters
        refined by several local steps (versions 1 and 2).
    weight_base:
        Per-delay aggregation weight a**l; 1.0 disables the
        weight-decreasing mechanism.
    autonomous_local_updates:
        Unavailable data-bearing clients refine their model locally.
    """

    coordinated: bool
    uplink_rule: str
    weight_base: float = 1.0
    autonomous_local_updates: bool = True


PAO_FED_VARIANTS = {
    "pao-fed-c0": VariantConfig(True, "echo", 1.0),
    "pao-fed-c1": VariantConfig(True, "shifted", 1.0),
    "pao-fed-c2": VariantConfig(True, "shifted", 0.2),
    "pao-fed-u0": VariantConfig(False, "echo", 1.0),
    "pao-fed-u1": VariantConfig(False, "shifted", 1.0),
    "pao-fed-u2": VariantConfig(False, "shifted", 0.2),
}

ALGORITHM_NAMES = tuple(PAO_FED_VARIANTS) + (
    "online-fed",
    "online-fedsgd",
    "pso-fed",
)


class MaskScheduler:
    """Rotating (or randomized) coordinate masks of size m out of D.

    Rotating mode implements the circular-shift schedule: client k's
    downlink mask at iteration n starts at m*(n + k) mod D (uncoordinated)
    or m*n mod D (coordinated) and spans m consecutive coordinates.
    Random mode draws an independent uniform m-subset per (client,
    iteration), matching the independence assumed by the mean-square
    analysis; it is deterministic in the scheduler seed.
    """

    def __init__(self, dim, m, coordinated=False, mode="rotating", seed=0):
        if not 1 <= m <= dim:
            raise ValueError(f"need 1 <= m <= D, got m={m}, D={dim}")
        if mode not in ("rotating", "random"):
            raise ValueError(f"unknown mask mode {mode!r}")
        self.dim = dim
        self.m = m
        self.coordinated = coordinated
        self.mode = mode
        self.seed = seed

    def downlink_mask(self, client_id, iteration):
        if self.mode == "random":
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    [self.seed, 0 if self.coordinated else client_id, iteration]
                )
            )
            return np.sort(rng.choice(self.dim, size=self.m, replace=False))
        offset = 0 if self.coordinated else client_id
        start = (self.m * (iteration + offset)) % self.dim
        return (start + np.arange(self.m)) % self.dim

    def downlink_masks(self, client_ids, iteration):
        """(len(client_ids), m) mask matrix for one iteration."""
        if self.coordinated:
            row = self.downlink_mask(0, iteration)
            return np.tile(row, (len(client_ids), 1))
        if self.mode == "random":
            rows = [self.downlink_mask(k, iteration) for k in client_ids]
            return np.array(rows, dtype=int).reshape(len(client_ids), self.m)
        starts = (self.m * (iteration + np.asarray(client_ids))) % self.dim
        return (starts[:, None] + np.arange(self.m)[None, :]) % self.dim

    def uplink_mask(self, client_id, iteration, rule):
        if rule == "shifted":
            return self.downlink_mask(client_id, iteration + 1)
        if rule == "echo":
            return self.downlink_mask(client_id, iteration)
        raise ValueError(f"unknown uplink rule {rule!r}")

    def uplink_masks(self, client_ids, iteration, rule):
        if rule == "shifted":
            return self.downlink_masks(client_ids, iteration + 1)
        if rule == "echo":
            return self.downlink_masks(client_ids, iteration)
        raise ValueError(f"unknown uplink rule {rule!r}")


def advance_masks(scheduler, iteration, client_ids):
    """Downlink masks of the given clients at an iteration."""
    return scheduler.downlink_masks(client_ids, iteration)


def uplink_mask(scheduler, rule, client_id, iteration):
    """Uplink mask under the variant's rule (echo or shifted)."""
    return scheduler.uplink_mask(client_id, iteration, rule)


def client_step_available(local_model, downlink_mask, server_values, z, y, mu):
    """Merge the received server portion into the local model, then take
    one LMS step against the merged model.

    Returns the updated local model; the caller extracts the uplink
    payload with its own mask.
    """
    z = np.asarray(z, dtype=float)
    merged = np.array(local_model, dtype=float)
    if z.shape != merged.shape:
        raise ValueError("feature vector and model dimensions differ")
    if len(downlink_mask) != len(server_values):
        raise ValueError("downlink mask and server values lengths differ")
    merged[downlink_mask] = server_values
    err = y - merged @ z
    return merged + mu * err * z


def client_step_autonomous(local_model, z, y, mu):
    """Local LMS refinement without any communication."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(local_model, dtype=float)
    err = y - w @ z
    return w + mu * err * z


def compute_deviation(messages, server_model):
    """Average masked deviation of one delay group from the server model.

    Zero outside the union of the group's masks; an empty group yields
    the zero vector by convention.
    """
    delta = np.zeros_like(server_model)
    if not messages:
        return delta
    for msg in messages:
        delta_vals = msg.payload - server_model[msg.mask]
        np.add.at(delta, msg.mask, delta_vals)
    delta /= len(messages)
    return delta


def aggregation_weights(weight_base, cutoff):
    """Per-delay weights a**l for l = 0..cutoff (a=1 gives flat weights)."""
    return float(weight_base) ** np.arange(cutoff + 1, dtype=float)


def server_aggregate(server_model, deltas, weights):
    """Weighted sum of per-delay deviations added onto the server model.

    ``deltas`` maps delay l to its deviation vector; delays beyond the
    weight vector are discarded (weight 0).
    """
    w = np.array(server_model, dtype=float)
    for l, delta in deltas.items():
        if l < len(weights):
            w += weights[l] * delta
    return w


@dataclass
class IterationBatch:
    """Environment realization for one iteration, shared by algorithms.

    clients: ids receiving a sample now; features/targets aligned with it.
    available: Bernoulli participation outcomes for those clients.
    delays: channel delay per client for a message sent now (-1 = lost).
    """

    iteration: int
    clients: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    available: np.ndarray
    delays: np.ndarray


class _AlgorithmBase:
    """Shared state: server model, client models, queue, traffic counters."""

    def __init__(self, name, n_clients, dim, mu):
        if mu < 0:
            raise ValueError(f"learning rate must be nonnegative, got {mu}")
        self.name = name
        self.n_clients = n_clients
        self.dim = dim
        self.mu = float(mu)
        self.server_model = np.zeros(dim)
        self.client_models = np.zeros((n_clients, dim))
        self.queue = MessageQueue()
        self.uplink_params = 0
        self.downlink_params = 0
        self.trace = None

    def _send(self, client_id, iteration, mask, payload, delay):
        self.uplink_params += len(mask)
        if delay < 0:
            if self.trace is not None:
                self.trace.record(iteration, client_id, "discard")
            return
        self.queue.enqueue(
            InFlightMessage(
                client_id=int(client_id),
                send_iteration=iteration,
                delivery_iteration=iteration + int(delay),
                mask=mask,
                payload=payload,
            )
        )
        if self.trace is not None:
            self.trace.record(iteration, client_id, "send", int(delay))

    def _autonomous_batch(self, ids, Z, y):
        if len(ids) == 0:
            return
        W = self.client_models[ids]
        err = y - np.einsum("ij,ij->i", W, Z)
        self.client_models[ids] = W + self.mu * err[:, None] * Z

    def _deliver(self, iteration):
        groups = self.queue.deliver(iteration)
        if self.trace is not None:
            for l, msgs in groups.items():
                for m in msgs:
                    self.trace.record(iteration, m.client_id, "deliver", l)
        return groups


class PaoFed(_AlgorithmBase):
    """Partial-sharing asynchronous online federated learning.

    Available data-bearing clients merge the received server portion,
    take an LMS step, and upload their masked update through the delay
    channel. The server aggregates arrivals by delay with weights a**l,
    keeping only the most recent claims where arrivals of different
    staleness touch the same coordinate.
    """

    def __init__(
        self,
        name,
        n_clients,
        dim,
        m,
        mu,
        variant,
        delay_cutoff,
        mask_mode="rotating",
        mask_seed=0,
        full_downlink=False,
        prune_stale_claims=True,
    ):
        super().__init__(name, n_clients, dim, mu)
        self.variant = variant
        self.scheduler = MaskScheduler(
            dim, m, coordinated=variant.coordinated, mode=mask_mode, seed=mask_seed
        )
        self.weights = aggregation_weights(variant.weight_base, delay_cutoff)
        self.full_downlink = full_downlink
        self.prune_stale_claims = prune_stale_claims

    def step(self, batch):
        n = batch.iteration
        ids = batch.clients
        av = batch.available
        ids_av, ids_un = ids[av], ids[~av]

        if len(ids_av):
            Z_av = batch.features[av]
            y_av = batch.targets[av]
            if self.full_downlink:
                merged = np.tile(self.server_model, (len(ids_av), 1))
                self.downlink_params += self.dim * len(ids_av)
            else:
                masks = self.scheduler.downlink_masks(ids_av, n)
                merged = self.client_models[ids_av].copy()
                rows = np.arange(len(ids_av))[:, None]
                merged[rows, masks] = self.server_model[masks]
                self.downlink_params += masks.size
            err = y_av - np.einsum("ij,ij->i", merged, Z_av)
            updated = merged + self.mu * err[:, None] * Z_av
            self.client_models[ids_av] = updated

            up_masks = self.scheduler.uplink_masks(
                ids_av, n, self.variant.uplink_rule
            )
            delays_av = batch.delays[av]
            for i, k in enumerate(ids_av):
                self._send(k, n, up_masks[i], updated[i, up_masks[i]], delays_av[i])

        if self.variant.autonomous_local_updates and len(ids_un):
            self._autonomous_batch(ids_un, batch.features[~av], batch.targets[~av])

        groups = self._deliver(n)
        if self.prune_stale_claims:
            groups = resolve_conflicts(groups, shared_ties=True)
        deltas = {
            l: compute_deviation(msgs, self.server_model)
            for l, msgs in groups.items()
        }
        self.server_model = server_aggregate(self.server_model, deltas, self.weights)


class OnlineFed(_AlgorithmBase):
    """Online FedAvg: the server samples a client subset each iteration;
    sampled clients that are available and hold data restart from the
    received global model, take one LMS step, and upload the full model.
    The server replaces its model by the mean of the arrived ones."""

    def __init__(self, name, n_clients, dim, mu, subset_size, selection_rng):
        super().__init__(name, n_clients, dim, mu)
        if not 0 <= subset_size <= n_clients:
            raise ValueError(f"subset size must lie in [0, K], got {subset_size}")
        self.subset_size = subset_size
        self.selection_rng = selection_rng
        self._full_mask = np.arange(dim)

    def _select(self):
        if self.subset_size >= self.n_clients:
            return None  # every client; Online-FedSGD behavior
        return self.selection_rng.choice(
            self.n_clients, size=self.subset_size, replace=False
        )

    def step(self, batch):
        n = batch.iteration
        selected = self._select()
        take = batch.available.copy()
        if selected is not None:
            take &= np.isin(batch.clients, selected)
        ids = batch.clients[take]
        if len(ids):
            Z = batch.features[take]
            y = batch.targets[take]
            err = y - Z @ self.server_model
            models = self.server_model[None, :] + self.mu * err[:, None] * Z
            self.downlink_params += self.dim * len(ids)
            delays = batch.delays[take]
            for i, k in enumerate(ids):
                self._send(k, n, self._full_mask, models[i], delays[i])

        arrived = [m for msgs in self._deliver(n).values() for m in msgs]
        if arrived:
            self.server_model = np.mean([m.payload for m in arrived], axis=0)


class PsoFed(_AlgorithmBase):
    """Partial-sharing online FL with server-side subsampling.

    Selected available clients exchange rotating masked portions
    (coordinated, shifted uplink) and non-participating data-bearing
    clients refine locally. The server predates the asynchronous model
    and treats every arrival as undelayed: masks are implied by the
    round index rather than transmitted, so a payload delayed by l
    iterations is scattered at the coordinates of the current round's
    schedule, not the sender's. Undelayed traffic is unaffected.
    """

    def __init__(
        self,
        name,
        n_clients,
        dim,
        m,
        mu,
        subset_size,
        selection_rng,
        mask_mode="rotating",
        mask_seed=0,
    ):
        super().__init__(name, n_clients, dim, mu)
        if not 0 <= subset_size <= n_clients:
            raise ValueError(f"subset size must lie in [0, K], got {subset_size}")
        self.subset_size = subset_size
        self.selection_rng = selection_rng
        self.scheduler = MaskScheduler(
            dim, m, coordinated=True, mode=mask_mode, seed=mask_seed
        )

    def step(self, batch):
        n = batch.iteration
        if self.subset_size >= self.n_clients:
            selected_mask = np.ones(len(batch.clients), dtype=bool)
        else:
            selected = self.selection_rng.choice(
                self.n_clients, size=self.subset_size, replace=False
            )
            selected_mask = np.isin(batch.clients, selected)
        take = selected_mask & batch.available
        ids = batch.clients[take]

        if len(ids):
            Z = batch.features[take]
            y = batch.targets[take]
            masks = self.scheduler.downlink_masks(ids, n)
            merged = self.client_models[ids].copy()
            rows = np.arange(len(ids))[:, None]
            merged[rows, masks] = self.server_model[masks]
            err = y - np.einsum("ij,ij->i", merged, Z)
            updated = merged + self.mu * err[:, None] * Z
            self.client_models[ids] = updated
            self.downlink_params += masks.size
            up_masks = self.scheduler.uplink_masks(ids, n, "shifted")
            delays = batch.delays[take]
            for i, k in enumerate(ids):
                self._send(k, n, up_masks[i], updated[i, up_masks[i]], delays[i])

        rest = ~take
        self._autonomous_batch(
            batch.clients[rest], batch.features[rest], batch.targets[rest]
        )

        arrived = []
        for msgs in self._deliver(n).values():
            for msg in msgs:
                if msg.delay:  # delay-unaware decode: current-round mask
                    msg.mask = self.scheduler.uplink_mask(
                        msg.client_id, n, "shifted"
                    )
                arrived.append(msg)
        if arrived:
            groups = resolve_conflicts({0: arrived}, shared_ties=True)
            if groups:
                delta = compute_deviation(groups[0], self.server_model)
                self.server_model = self.server_model + delta


def make_algorithm(name, *, n_clients, dim, m, mu, delay_cutoff, subset_size,
                   selection_rng, mask_mode="rotating", mask_seed=0,
                   full_downlink=False, weight_base=None):
    """Instantiate an algorithm by its registry name.

    ``weight_base`` overrides the decreasing-weight base of the
    weight-decreasing variants (versions 2); flat-weight variants keep
    their flat weights.
    """
    if name in PAO_FED_VARIANTS:
        variant = PAO_FED_VARIANTS[name]
        if weight_base is not None and variant.weight_base != 1.0:
            variant = replace(variant, weight_base=weight_base)
        return PaoFed(
            name,
            n_clients,
            dim,
            m,
            mu,
            variant,
            delay_cutoff,
            mask_mode=mask_mode,
            mask_seed=mask_seed,
            full_downlink=full_downlink,
        )
    if name == "online-fed":
        return OnlineFed(name, n_clients, dim, mu, subset_size, selection_rng)
    if name == "online-fedsgd":
        return OnlineFed(name, n_clients, dim, mu, n_clients, selection_rng)
    if name == "pso-fed":
        return PsoFed(
            name,
            n_clients,
            dim,
            m,
            mu,
            subset_size,
            selection_rng,
            mask_mode=mask_mode,
            mask_seed=mask_seed,
        )
    raise ValueError(f"unknown algorithm {name!r}")
