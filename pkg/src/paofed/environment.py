"""Client availability, channel delays, and the in-flight message queue.

Participation of a data-bearing client at an iteration is a Bernoulli
trial on its probability p_{k,n} (forced to 0 when no data arrives).
Each uplink message independently draws a delay that is geometric in
units of the delay granularity g, so the probability of being delayed by
at least l iterations is tail**(l/g); delays beyond the cutoff are
discarded at send time. Deliveries at an iteration are partitioned by
their delay, and coordinates claimed by updates of different staleness
keep only the most recent claims.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DISCARDED",
    "AvailabilityModel",
    "DelayModel",
    "InFlightMessage",
    "MessageQueue",
    "EventTrace",
    "sample_availability",
    "sample_delay",
    "sample_delays",
    "resolve_conflicts",
]


class _Discarded:
    """Sentinel for messages dropped by the delay cutoff."""

    __slots__ = ()

    def __repr__(self):
        return "DISCARDED"


DISCARDED = _Discarded()


@dataclass
class AvailabilityModel:
    """Per-client participation probabilities.

    ``probabilities[k]`` is the constant probability of client k; an
    optional ``schedule(client_id, iteration)`` callable overrides it for
    time-varying participation. The probability is 0 at iterations where
    the client receives no data.
    """

    probabilities: np.ndarray
    schedule: object = None

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if np.any(self.probabilities < 0) or np.any(self.probabilities > 1):
            raise ValueError("participation probabilities must lie in [0, 1]")

    @property
    def n_clients(self):
        return len(self.probabilities)

    def probability(self, client_id, iteration, has_data=True):
        if not has_data:
            return 0.0
        if self.schedule is not None:
            return float(self.schedule(client_id, iteration))
        return float(self.probabilities[client_id])

    def probability_matrix(self, horizon):
        """(K, horizon) matrix of probabilities, before the data gate."""
        K = self.n_clients
        if self.schedule is None:
            return np.tile(self.probabilities[:, None], (1, horizon))
        P = np.empty((K, horizon))
        for k in range(K):
            for n in range(horizon):
                P[k, n] = self.schedule(k, n)
        return P


def sample_availability(am, client_id, iteration, rng, has_data=True):
    """One Bernoulli participation trial."""
    p = am.probability(client_id, iteration, has_data)
    return bool(rng.random() < p)


@dataclass(frozen=True)
class DelayModel:
    """Geometric uplink delay with cutoff.

    ``tail`` in [0, 1) is the per-step survival probability: a message is
    delayed by at least l iterations (l a multiple of ``step``) with
    probability tail**(l/step). Delays above ``cutoff`` are discarded.
    """

    tail: float = 0.0
    cutoff: int = 0
    step: int = 1

    def __post_init__(self):
        if not (0.0 <= self.tail < 1.0):
            raise ValueError(f"tail must lie in [0, 1), got {self.tail}")
        if self.cutoff < 0:
            raise ValueError(f"cutoff must be >= 0, got {self.cutoff}")
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")


def sample_delay(dm, rng):
    """Draw one delay; returns a multiple of ``dm.step`` or DISCARDED."""
    if dm.tail == 0.0:
        return 0
    delay = dm.step * (rng.geometric(1.0 - dm.tail) - 1)
    return DISCARDED if delay > dm.cutoff else int(delay)


def sample_delays(dm, size, rng):
    """Vector of delays; discarded messages are encoded as -1."""
    if dm.tail == 0.0:
        return np.zeros(size, dtype=int)
    delays = dm.step * (rng.geometric(1.0 - dm.tail, size=size) - 1)
    delays[delays > dm.cutoff] = -1
    return delays


@dataclass
class InFlightMessage:
    """A masked uplink payload traveling from a client to the server."""

    client_id: int
    send_iteration: int
    delivery_iteration: int
    mask: np.ndarray
    payload: np.ndarray

    @property
    def delay(self):
        return self.delivery_iteration - self.send_iteration

    def __post_init__(self):
        if self.delivery_iteration < self.send_iteration:
            raise ValueError("delivery cannot precede the send iteration")
        if len(self.mask) != len(self.payload):
            raise ValueError("mask and payload lengths differ")


class MessageQueue:
    """In-flight messages bucketed by delivery iteration."""

    def __init__(self):
        self._buckets = {}

    def __len__(self):
        return sum(len(v) for v in self._buckets.values())

    def enqueue(self, msg):
        self._buckets.setdefault(msg.delivery_iteration, []).append(msg)

    def deliver(self, iteration):
        """Messages arriving now, grouped by delay l (a client may appear
        in several groups at once)."""
        msgs = self._buckets.pop(iteration, [])
        groups = {}
        for msg in msgs:
            groups.setdefault(msg.delay, []).append(msg)
        return dict(sorted(groups.items()))


def resolve_conflicts(groups, shared_ties=False):
    """Keep only the most recent claims on contested coordinates.

    ``groups`` maps delay l to the messages delivered with that delay
    (smaller l = more recent send). A coordinate claimed by messages of
    different delay survives only at the smallest delay. With
    ``shared_ties=False`` equally recent claims are further pruned to the
    lowest client id, so the returned masks are pairwise disjoint; with
    ``shared_ties=True`` all claimants at the winning delay keep the
    coordinate and are averaged downstream. Messages whose mask empties
    are dropped from their group. Idempotent either way.
    """
    if not groups:
        return {}
    dim = 0
    for msgs in groups.values():
        for m in msgs:
            if len(m.mask):
                dim = max(dim, int(m.mask.max()) + 1)
    best_delay = np.full(dim, np.iinfo(np.int64).max, dtype=np.int64)
    best_client = np.full(dim, np.iinfo(np.int64).max, dtype=np.int64)
    for l in sorted(groups):
        for msg in sorted(groups[l], key=lambda m: m.client_id):
            sel = msg.mask[best_delay[msg.mask] > l]
            best_delay[sel] = l
            best_client[sel] = np.minimum(best_client[sel], msg.client_id)

    resolved = {}
    for l in sorted(groups):
        kept = []
        for msg in groups[l]:
            keep = best_delay[msg.mask] == l
            if not shared_ties:
                keep &= best_client[msg.mask] == msg.client_id
            if keep.all():
                kept.append(msg)
            elif keep.any():
                kept.append(
                    InFlightMessage(
                        client_id=msg.client_id,
                        send_iteration=msg.send_iteration,
                        delivery_iteration=msg.delivery_iteration,
                        mask=msg.mask[keep],
                        payload=msg.payload[keep],
                    )
                )
        if kept:
            resolved[l] = kept
    return resolved


@dataclass
class EventTrace:
    """Optional per-run event log (iteration, client, event, delay)."""

    events: list = field(default_factory=list)

    def record(self, iteration, client_id, event, delay=""):
        self.events.append((int(iteration), int(client_id), event, delay))

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("iteration,client,event,delay\n")
            for it, k, ev, dl in self.events:
                f.write(f"{it},{k},{ev},{dl}\n")
