"""Random Fourier feature map shared by the server and all clients.

The nonlinear regression runs in a fixed D-dimensional feature space.
Inputs are embedded with a frozen random cosine projection approximating
the Gaussian kernel: feature i of x is sqrt(2/D) * cos(w_i . x + b_i)
with w_i drawn from N(0, I/sigma^2) and b_i uniform on [0, 2*pi).
Inner products of mapped vectors then approximate
exp(-||x - x'||^2 / (2 sigma^2)) in expectation over the draw of the map.
"""

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FeatureMap",
    "build_feature_map",
    "map_input",
    "median_kernel_width",
]


@dataclass(frozen=True)
class FeatureMap:
    """Frozen random projection defining the shared feature space.

    Attributes
    ----------
    seed : int
        Seed the map was built from; two maps with the same
        (seed, dim_in, dim_out, kernel_width) are identical.
    dim_in : int
        Input dimension L.
    dim_out : int
        Feature dimension D.
    kernel_width : float
        Gaussian kernel bandwidth sigma.
    frequencies : ndarray, shape (D, L)
        Projection frequencies, one row per feature.
    phases : ndarray, shape (D,)
        Phase offsets in [0, 2*pi).
    """

    seed: int
    dim_in: int
    dim_out: int
    kernel_width: float
    frequencies: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.frequencies.setflags(write=False)
        self.phases.setflags(write=False)

    @property
    def scale(self):
        return np.sqrt(2.0 / self.dim_out)

    def __call__(self, x):
        return map_input(self, x)

    def transform(self, X):
        """Map a batch of inputs, shape (n, L) -> (n, D)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim_in:
            raise ValueError(
                f"expected inputs of shape (n, {self.dim_in}), got {X.shape}"
            )
        return self.scale * np.cos(X @ self.frequencies.T + self.phases)

    def to_dict(self):
        """Self-describing artifact; the four stored values reconstruct
        the map deterministically."""
        return {
            "seed": self.seed,
            "dim_in": self.dim_in,
            "dim_out": self.dim_out,
            "kernel_width": self.kernel_width,
        }

    @classmethod
    def from_dict(cls, d):
        return build_feature_map(
            d["seed"], d["dim_in"], d["dim_out"], d["kernel_width"]
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def build_feature_map(seed, dim_in, dim_out, kernel_width):
    """Draw a feature map, deterministically in ``seed``.

    Parameters
    ----------
    seed : int
        RNG seed; the map is a pure function of all four arguments.
    dim_in : int
        Input dimension L >= 1.
    dim_out : int
        Feature dimension D >= 1.
    kernel_width : float
        Gaussian kernel bandwidth sigma > 0.
    """
    if dim_in < 1:
        raise ValueError(f"dim_in must be >= 1, got {dim_in}")
    if dim_out < 1:
        raise ValueError(f"dim_out must be >= 1, got {dim_out}")
    if not kernel_width > 0:
        raise ValueError(f"kernel_width must be > 0, got {kernel_width}")
    rng = np.random.default_rng(seed)
    frequencies = rng.normal(0.0, 1.0 / kernel_width, size=(dim_out, dim_in))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=dim_out)
    return FeatureMap(
        seed=int(seed),
        dim_in=int(dim_in),
        dim_out=int(dim_out),
        kernel_width=float(kernel_width),
        frequencies=frequencies,
        phases=phases,
    )


def map_input(fm, x):
    """Embed one input vector; every entry lies in [-sqrt(2/D), sqrt(2/D)],
    so the squared norm of the result never exceeds 2."""
    x = np.asarray(x, dtype=float)
    if x.shape != (fm.dim_in,):
        raise ValueError(f"expected input of shape ({fm.dim_in},), got {x.shape}")
    return fm.scale * np.cos(fm.frequencies @ x + fm.phases)


def median_kernel_width(sample_inputs):
    """Median pairwise distance of a probe sample (the median heuristic).

    A standard reproducible bandwidth choice when sigma is not given:
    draw a probe from the training input distribution and take the median
    of its pairwise Euclidean distances.
    """
    X = np.asarray(sample_inputs, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-d probe with at least two rows")
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    iu = np.triu_indices(X.shape[0], k=1)
    width = float(np.median(dist[iu]))
    if width <= 0:
        raise ValueError("probe sample is degenerate (zero median distance)")
    return width
