"""Extended-system convergence analysis at desk scale.

One algorithm iteration is a linear recursion on the stacked state
w_e = col{server, client models, one pre-update copy, and cutoff older
copies of every client model}: 1 + K*(cutoff+2) blocks of size D. The
local merge-and-update step is the random matrix A_e (plus the LMS
gradient term), and the aggregation/shift step is the random matrix B_e.
Expectations and block-Kronecker second moments of these matrices give
the mean recursion, the step-size stability bounds, and transient and
steady-state predictions of the server's mean square deviation, which
can be compared against Monte-Carlo simulation of the same environment.

The analysis assumes data arrives at every client every iteration
(mapped features drawn from a stationary sequence with per-client
correlation R_k) and masks drawn as independent uniform m-subsets, the
setting in which E[a*M] = p*(m/D)*I holds per iteration. The simulator's
rotating schedule satisfies it only on time average, so validation runs
use the scheduler's random mode.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .algorithms import PaoFed, IterationBatch, VariantConfig
from .environment import DelayModel, sample_delays
from .seeding import substream

__all__ = [
    "ExtendedSystem",
    "NoSteadyStateError",
    "expected_A",
    "realize_A",
    "sample_A",
    "realize_B",
    "sample_arrivals",
    "sample_B",
    "expected_B",
    "estimate_Q",
    "block_kron",
    "bvec",
    "bvec_inv",
    "build_F",
    "build_h",
    "spectral_radius",
    "largest_eigenvalue",
    "step_size_bounds",
    "mean_trajectory",
    "msd_transient",
    "msd_steady_state",
    "estimate_correlation",
    "simulate_linear_msd",
]

log = logging.getLogger(__name__)


class NoSteadyStateError(RuntimeError):
    """The mean-square recursion has no fixed point (spectral radius >= 1)."""


@dataclass(frozen=True)
class ExtendedSystem:
    """Desk-scale description of the coupled server/client recursion.

    corr:
        Per-client feature correlation matrices R_k, shape (K, D, D).
    participation:
        Per-client constant participation probabilities p_k.
    mask_size:
        Number m of coordinates exchanged per message.
    weights:
        Aggregation weights for delays 0..cutoff, weights[0] == 1.
    delay:
        Channel delay model; its cutoff fixes the number of stale
        copies carried in the extended state.
    noise_variances:
        Observation noise variance per client.
    """

    corr: np.ndarray
    participation: np.ndarray
    mask_size: int
    weights: np.ndarray
    delay: DelayModel
    noise_variances: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "corr", np.asarray(self.corr, dtype=float))
        object.__setattr__(
            self, "participation", np.asarray(self.participation, dtype=float)
        )
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.noise_variances is None:
            object.__setattr__(
                self, "noise_variances", np.zeros(self.n_clients)
            )
        else:
            object.__setattr__(
                self,
                "noise_variances",
                np.asarray(self.noise_variances, dtype=float),
            )
        if self.corr.ndim != 3 or self.corr.shape[1] != self.corr.shape[2]:
            raise ValueError("corr must have shape (K, D, D)")
        if len(self.participation) != self.n_clients:
            raise ValueError("participation length must equal the client count")
        if np.any(self.participation < 0) or np.any(self.participation > 1):
            raise ValueError("participation probabilities must lie in [0, 1]")
        if not 1 <= self.mask_size <= self.dim:
            raise ValueError("mask_size must lie in [1, D]")
        if len(self.weights) != self.delay.cutoff + 1:
            raise ValueError("need one aggregation weight per delay 0..cutoff")
        if self.weights[0] != 1.0:
            raise ValueError("the weight of undelayed updates must be 1")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("aggregation weights must lie in [0, 1]")
        for k, R in enumerate(self.corr):
            if not np.allclose(R, R.T):
                raise ValueError(f"corr[{k}] is not symmetric")

    @property
    def n_clients(self):
        return self.corr.shape[0]

    @property
    def dim(self):
        return self.corr.shape[1]

    @property
    def cutoff(self):
        return self.delay.cutoff

    @property
    def mask_density(self):
        return self.mask_size / self.dim

    @property
    def block_count(self):
        return 1 + self.n_clients * (self.cutoff + 2)

    @property
    def extended_dim(self):
        return self.block_count * self.dim

    # block layout: 0 = server, 1..K = live client models,
    # 1 + K*(1+j) + k = copy of client k's model from j iterations ago
    # (stage 0 duplicates the pre-update live model).
    def live_block(self, k):
        return 1 + k

    def stage_block(self, j, k):
        return 1 + self.n_clients * (1 + j) + k

    def block_slice(self, b):
        return slice(b * self.dim, (b + 1) * self.dim)

    def extended_correlation(self):
        """R_e: zero server block, R_k on live blocks, zero on copies."""
        R = np.zeros((self.extended_dim, self.extended_dim))
        for k in range(self.n_clients):
            s = self.block_slice(self.live_block(k))
            R[s, s] = self.corr[k]
        return R

    def extended_noise_moment(self):
        """E of the noise-driven forcing: noise_var_k * R_k on live blocks."""
        P = np.zeros((self.extended_dim, self.extended_dim))
        for k in range(self.n_clients):
            s = self.block_slice(self.live_block(k))
            P[s, s] = self.noise_variances[k] * self.corr[k]
        return P

    def extended_target(self, w_star):
        """Stack a D-dim target across every block of the extended state."""
        w_star = np.asarray(w_star, dtype=float)
        if w_star.shape != (self.dim,):
            raise ValueError(f"expected target of shape ({self.dim},)")
        return np.tile(w_star, self.block_count)


def expected_A(sys):
    """Closed-form E[A_e]: client k merges the masked server portion with
    probability p_k * m/D per coordinate; rows sum to 1 exactly."""
    n = sys.extended_dim
    E = np.eye(n)
    srv = sys.block_slice(0)
    for k in range(sys.n_clients):
        q = sys.participation[k] * sys.mask_density
        s = sys.block_slice(sys.live_block(k))
        E[s, s] = (1.0 - q) * np.eye(sys.dim)
        E[s, srv] = q * np.eye(sys.dim)
    return E


def realize_A(sys, available, masks):
    """A_e realization from explicit participation and downlink masks.

    available: boolean per client; masks: per-client index arrays (only
    read for participating clients). Every realization is row-stochastic.
    """
    n = sys.extended_dim
    A = np.eye(n)
    D = sys.dim
    for k in range(sys.n_clients):
        if not available[k]:
            continue
        lo = sys.live_block(k) * D
        idx = np.asarray(masks[k], dtype=int)
        A[lo + idx, lo + idx] = 0.0
        A[lo + idx, idx] = 1.0
    return A


def _random_mask(sys, rng):
    return rng.choice(sys.dim, size=sys.mask_size, replace=False)


def sample_A(sys, rng):
    """Draw one A_e with Bernoulli participation and uniform masks."""
    available = rng.random(sys.n_clients) < sys.participation
    masks = [_random_mask(sys, rng) if a else None for a in available]
    return realize_A(sys, available, masks)


def realize_B(sys, arrivals):
    """B_e realization from the delivered updates of one iteration.

    arrivals maps delay l to a list of (client, uplink mask) pairs. The
    server row removes weighted mask averages from its own block and adds
    them back on the blocks holding the senders' models at the matching
    staleness (the live block for l = 0, the (l-1)-stage copy otherwise),
    so each row sums to 1 exactly for any weights. The remaining rows
    shift every copy chain by one iteration.
    """
    n = sys.extended_dim
    D = sys.dim
    K = sys.n_clients
    B = np.zeros((n, n))
    srv = np.arange(D)
    B[srv, srv] = 1.0
    for l, group in arrivals.items():
        if not group or l > sys.cutoff:
            continue
        w = sys.weights[l] / len(group)
        for k, mask in group:
            idx = np.asarray(mask, dtype=int)
            col_block = sys.live_block(k) if l == 0 else sys.stage_block(l - 1, k)
            co = col_block * D
            B[idx, co + idx] += w
            B[idx, idx] -= w
    for k in range(K):
        lo = sys.live_block(k) * D
        B[lo + srv, lo + srv] = 1.0  # live models keep their updated values
        s0 = sys.stage_block(0, k) * D
        B[s0 + srv, lo + srv] = 1.0  # newest copy snapshots the live model
        for j in range(1, sys.cutoff + 1):
            ro = sys.stage_block(j, k) * D
            prev = sys.stage_block(j - 1, k) * D
            B[ro + srv, prev + srv] = 1.0
    return B


def sample_arrivals(sys, rng):
    """Joint draw of one iteration's delivered-update pattern.

    For every delay l and client k, the client sent an update l
    iterations ago with probability p_k, and that update arrives now if
    its channel delay equals l. Masks are fresh uniform m-subsets. A
    client can appear at several delays at once.
    """
    L = sys.cutoff + 1
    K = sys.n_clients
    sent = rng.random((L, K)) < sys.participation[None, :]
    delays = sample_delays(sys.delay, (L, K), rng)
    hit = sent & (delays == np.arange(L)[:, None])
    arrivals = {}
    for l in range(L):
        group = [(k, _random_mask(sys, rng)) for k in np.nonzero(hit[l])[0]]
        if group:
            arrivals[l] = group
    return arrivals


def sample_B(sys, rng):
    """Draw one B_e consistently with the environment's distributions."""
    return realize_B(sys, sample_arrivals(sys, rng))


def expected_B(sys, n_samples, rng):
    """Monte-Carlo E[B_e]; the coupled group-size denominators have no
    closed form, so the expectation is estimated from realizations."""
    acc = np.zeros((sys.extended_dim, sys.extended_dim))
    for _ in range(n_samples):
        acc += sample_B(sys, rng)
    return acc / n_samples


def block_kron(A, B, block_size):
    """Block Kronecker product for matrices partitioned in square blocks.

    Defined so that bvec(A @ X @ B.T) == block_kron(A, B) @ bvec(X) for
    conformable block partitions; with block_size 1 it reduces to the
    ordinary Kronecker product.
    """
    d = block_size
    pa, qa = A.shape[0] // d, A.shape[1] // d
    pb, qb = B.shape[0] // d, B.shape[1] // d
    if (pa * d, qa * d) != A.shape or (pb * d, qb * d) != B.shape:
        raise ValueError("matrix shapes must be multiples of block_size")
    Ar = A.reshape(pa, d, qa, d)
    Br = B.reshape(pb, d, qb, d)
    out = np.einsum("ibjd,kalc->ikabjlcd", Ar, Br)
    return out.reshape(pa * pb * d * d, qa * qb * d * d)


def bvec(M, block_size):
    """Block vectorization: blocks enumerated row-block-major, each block
    vectorized column-major."""
    d = block_size
    p, q = M.shape[0] // d, M.shape[1] // d
    if (p * d, q * d) != M.shape:
        raise ValueError("matrix shape must be a multiple of block_size")
    return np.transpose(M.reshape(p, d, q, d), (0, 2, 3, 1)).ravel()


def bvec_inv(v, block_size, block_rows=None):
    """Inverse of bvec; assumes a square block grid unless given."""
    d = block_size
    n_blocks = v.size // (d * d)
    p = int(round(np.sqrt(n_blocks))) if block_rows is None else block_rows
    q = n_blocks // p
    if p * q * d * d != v.size:
        raise ValueError("vector length inconsistent with block_size")
    return np.transpose(v.reshape(p, q, d, d), (0, 3, 1, 2)).reshape(p * d, q * d)


def _expected_self_block_kron(flat_samples, p, d):
    """E[X (x)_b X] from flattened realizations via one Gram product."""
    S = flat_samples.shape[0]
    outer = flat_samples.T @ flat_samples / S  # indexed (i,b,j,dd) x (k,a,l,c)
    T = outer.reshape(p, d, p, d, p, d, p, d)
    T = np.transpose(T, (0, 4, 5, 1, 2, 6, 7, 3))
    return np.ascontiguousarray(T.reshape((p * p * d * d, p * p * d * d)))


def estimate_Q(sys, n_samples, rng):
    """Monte-Carlo block-Kronecker second moments (Q_A, Q_B).

    Row sums converge to 1 at the usual 1/sqrt(n_samples) rate; in a
    deterministic environment one sample is exact.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n = sys.extended_dim
    A_flat = np.empty((n_samples, n * n))
    B_flat = np.empty((n_samples, n * n))
    for s in range(n_samples):
        A_flat[s] = sample_A(sys, rng).ravel()
        B_flat[s] = sample_B(sys, rng).ravel()
    p, d = sys.block_count, sys.dim
    Q_A = _expected_self_block_kron(A_flat, p, d)
    Q_B = _expected_self_block_kron(B_flat, p, d)
    return Q_A, Q_B


def build_F(sys, mu, Q_A, Q_B):
    """Mean-square transition matrix F = Q_B [(I - mu R_e) (x)_b (I - mu R_e)] Q_A.

    The middle factor keeps its mu^2 term so the scalar LMS case reduces
    to (1 - mu*lambda)^2 exactly; it is block-diagonal because R_e is,
    which makes its product with Q_A a set of small per-block products.
    """
    p, d = sys.block_count, sys.dim
    d2 = d * d
    H_blocks = [np.eye(d) for _ in range(p)]
    for k in range(sys.n_clients):
        H_blocks[sys.live_block(k)] = np.eye(d) - mu * sys.corr[k]
    M1 = np.empty_like(Q_A)
    for i in range(p):
        for k in range(p):
            rows = slice((i * p + k) * d2, (i * p + k + 1) * d2)
            M1[rows] = np.kron(H_blocks[k], H_blocks[i]) @ Q_A[rows]
    return Q_B @ M1


def build_h(sys, Q_B):
    """Noise forcing direction h = Q_B bvec(E of the noise moment)."""
    return Q_B @ bvec(sys.extended_noise_moment(), sys.dim)


def spectral_radius(M, tol=1e-8, max_iter=10_000):
    """Spectral radius by power iteration with a deterministic start.

    Convergence is tested on the geometric mean of consecutive growth
    ratios, which also settles for dominant complex-conjugate pairs.
    """
    n = M.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    prev_ratio = None
    est = 0.0
    for _ in range(max_iter):
        y = M @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        ratio = norm / np.linalg.norm(x)
        x = y / norm
        new_est = np.sqrt(ratio * prev_ratio) if prev_ratio is not None else ratio
        if prev_ratio is not None and abs(new_est - est) < tol * max(1.0, est):
            return float(new_est)
        est = new_est
        prev_ratio = ratio
    return float(est)


def largest_eigenvalue(R, tol=1e-10, max_iter=10_000):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = R.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iter):
        y = R @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x_new = y / norm
        lam_new = float(x_new @ R @ x_new)
        if abs(lam_new - lam) < tol * max(1.0, abs(lam_new)):
            return lam_new
        lam, x = lam_new, x_new
    return lam


def step_size_bounds(corr_list):
    """(mean bound, mean-square bound) = (2, 1) / max eigenvalue of any R_k."""
    lam = max(largest_eigenvalue(np.asarray(R, dtype=float)) for R in corr_list)
    if lam <= 0:
        raise ValueError("correlation matrices must have a positive eigenvalue")
    return 2.0 / lam, 1.0 / lam


def mean_trajectory(sys, mu, initial_error, n_iters, *, n_samples=2000, rng=None):
    """Predicted mean error trajectory E[w~_{e,n}], n = 0..n_iters.

    Iterates E[B](I - mu R_e)E[A]; E[B] is Monte-Carlo estimated. The
    live sub-block norms decay geometrically whenever mu is below the
    mean bound.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    initial_error = np.asarray(initial_error, dtype=float)
    if initial_error.shape != (sys.extended_dim,):
        raise ValueError("initial error must match the extended dimension")
    G = expected_B(sys, n_samples, rng) @ (
        (np.eye(sys.extended_dim) - mu * sys.extended_correlation())
        @ expected_A(sys)
    )
    out = np.empty((n_iters + 1, sys.extended_dim))
    out[0] = initial_error
    v = initial_error
    for i in range(1, n_iters + 1):
        v = G @ v
        out[i] = v
    return out


def _sigma0(sys):
    sigma = np.zeros((sys.extended_dim, sys.extended_dim))
    sigma[: sys.dim, : sys.dim] = np.eye(sys.dim)
    return bvec(sigma, sys.dim)


def msd_transient(sys, mu, Q_A, Q_B, h, n_iters, initial_error, F=None):
    """Predicted server mean square deviation at iterations 0..n_iters."""
    if F is None:
        F = build_F(sys, mu, Q_A, Q_B)
    w0 = np.asarray(initial_error, dtype=float)
    sigma0 = _sigma0(sys)
    curve = np.empty(n_iters + 1)
    v = sigma0.copy()
    forcing = 0.0
    Ft = F.T
    for i in range(n_iters + 1):
        curve[i] = w0 @ bvec_inv(v, sys.dim) @ w0 + mu * mu * forcing
        forcing += float(h @ v)
        v = Ft @ v
    return curve


def msd_steady_state(sys, mu, Q_A, Q_B, h, F=None, rho=None):
    """Steady-state server MSD: mu^2 h' (I - F')^{-1} bvec{diag(I_D, 0..)}.

    Raises NoSteadyStateError when the recursion is unstable. The linear
    system is solved with one step of iterative refinement; the relative
    residual and the stability gap 1 - rho(F) are logged.
    """
    if F is None:
        F = build_F(sys, mu, Q_A, Q_B)
    if rho is None:
        rho = spectral_radius(F)
    if rho >= 1.0:
        raise NoSteadyStateError(
            f"spectral radius {rho:.6f} >= 1; no steady state for mu={mu}"
        )
    sigma0 = _sigma0(sys)
    M = np.eye(F.shape[0]) - F.T
    x = np.linalg.solve(M, sigma0)
    resid = sigma0 - M @ x
    x += np.linalg.solve(M, resid)
    rel_resid = np.linalg.norm(sigma0 - M @ x) / np.linalg.norm(sigma0)
    log.info(
        "steady-state solve: rho(F)=%.6f, gap=%.3e, refined residual=%.3e",
        rho,
        1.0 - rho,
        rel_resid,
    )
    return float(mu * mu * (h @ x))


def estimate_correlation(fm, inputs):
    """Empirical feature correlation: the sample average of z z' over the
    mapped input batch."""
    Z = fm.transform(inputs)
    return Z.T @ Z / Z.shape[0]


def simulate_linear_msd(
    sys,
    mu,
    w_star,
    n_iters,
    n_runs,
    seed=0,
    prune_stale_claims=True,
):
    """Monte-Carlo server MSD of the simulated algorithm in the analysis
    environment (data at every client every iteration, features drawn
    with the per-client correlations, random masks, shifted uplink).

    Returns the per-iteration E||w* - w_n||^2 curve averaged over runs.
    """
    K, D = sys.n_clients, sys.dim
    w_star = np.asarray(w_star, dtype=float)
    chols = []
    for k in range(K):
        try:
            chols.append(np.linalg.cholesky(sys.corr[k]))
        except np.linalg.LinAlgError:
            vals, vecs = np.linalg.eigh(sys.corr[k])
            chols.append(vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))))
    chol_stack = np.stack(chols)
    noise_std = np.sqrt(sys.noise_variances)
    clients = np.arange(K)
    curve = np.zeros(n_iters)
    base = 1.0 if len(sys.weights) < 2 else float(sys.weights[1])
    variant = VariantConfig(coordinated=False, uplink_rule="shifted",
                            weight_base=base)
    for run in range(n_runs):
        rng_z = substream(seed, run, "features")
        rng_noise = substream(seed, run, "noise")
        rng_avail = substream(seed, run, "availability")
        rng_delay = substream(seed, run, "delay")
        mask_seed = int(substream(seed, run, "masks").integers(2**31))
        alg = PaoFed(
            "analysis",
            K,
            D,
            sys.mask_size,
            mu,
            variant,
            sys.cutoff,
            mask_mode="random",
            mask_seed=mask_seed,
            prune_stale_claims=prune_stale_claims,
        )
        alg.weights = sys.weights.copy()
        for n in range(n_iters):
            G = rng_z.standard_normal((K, D))
            Z = np.einsum("kij,kj->ki", chol_stack, G)
            y = Z @ w_star + rng_noise.standard_normal(K) * noise_std
            batch = IterationBatch(
                iteration=n,
                clients=clients,
                features=Z,
                targets=y,
                available=rng_avail.random(K) < sys.participation,
                delays=sample_delays(sys.delay, K, rng_delay),
            )
            alg.step(batch)
            err = w_star - alg.server_model
            curve[n] += err @ err
    return curve / n_runs
