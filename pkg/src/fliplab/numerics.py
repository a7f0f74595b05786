"""Shared numerical kernel.

Deterministic counter-based sampling streams, Gauss-Hermite quadrature
against the standard normal density, and small statistical estimators used
by every other module.

Conventions.  All floating point work is in float64.  A stream is addressed
by the pair (master_seed, stream_id): the same pair always reproduces the
same sample sequence, and distinct stream_ids map to distinct Philox keys,
so per-trial work can be farmed out to any number of processes and merged
deterministically.  Vectors and matrices are plain numpy arrays; functions
that hand arrays to callers never retain references to mutable state.
"""

import dataclasses
import hashlib
import math

import numpy as np
from scipy.special import ndtr, ndtri, roots_hermitenorm

_MASK64 = (1 << 64) - 1
_SUBSTREAM_SALT = 0xD6E8FEB86659FD93

DEFAULT_QUAD_NODES = 64
DEFAULT_MC_SAMPLES = 1_000_000


def _splitmix64(value):
    # Bijective 64-bit mixer; distinct inputs always map to distinct outputs.
    v = (value + 0x9E3779B97F4A7C15) & _MASK64
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (v ^ (v >> 31)) & _MASK64


class RngStream:
    """Single-owner Gaussian sample source for one (master_seed, stream_id).

    The Philox key is built from independent bijective hashes of the two
    ids, so streams with different stream_ids share no state and can be
    consumed in any order across worker processes.
    """

    def __init__(self, master_seed, stream_id):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array(
            [
                _splitmix64(self.master_seed ^ 0xA5A5A5A5A5A5A5A5),
                _splitmix64(self.stream_id),
            ],
            dtype=np.uint64,
        )
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def substream(self, label):
        """Derive an independent child stream for a labeled sub-task.

        Labels may be ints or strings; strings go through a fixed digest
        (never the salted builtin hash).  Child ids live in the hashed
        64-bit id space, so collisions with plain top-level trial indices
        have probability ~2^-64.
        """
        if isinstance(label, str):
            digest = hashlib.blake2b(label.encode(), digest_size=8).digest()
            label = int.from_bytes(digest, "little")
        mixed = _splitmix64(
            (_splitmix64(self.stream_id ^ _SUBSTREAM_SALT) + int(label)) & _MASK64
        )
        return RngStream(self.master_seed, mixed)


def derive_stream(master_seed, stream_id):
    """Deterministic, collision-free stream for one trial index."""
    return RngStream(master_seed, stream_id)


def sample_gaussian_matrix(stream, rows, cols, variance):
    """i.i.d. N(0, variance) matrix of shape (rows, cols)."""
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix shape must be positive, got {rows}x{cols}")
    if not variance > 0.0:
        raise ValueError(f"variance must be positive, got {variance}")
    return math.sqrt(variance) * stream.standard_normal((rows, cols))


@dataclasses.dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights integrating against the standard normal density."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_hermite(cls, n=DEFAULT_QUAD_NODES):
        """Probabilists' Gauss-Hermite rule, exact through degree 2n-1."""
        if n < 1:
            raise ValueError(f"node count must be positive, got {n}")
        x, w = roots_hermitenorm(int(n))
        return cls(nodes=x, weights=w / math.sqrt(2.0 * math.pi))

    @property
    def node_count(self):
        return self.nodes.size


def gauss_hermite_expect(f, dims, rule=None):
    """E[f(Z_1, ..., Z_dims)] for iid standard normals, tensorized rule.

    Raises ArithmeticError if f produces a non-finite value at any node
    tuple; dims beyond 3 are rejected because the tensor rule's node count
    grows as N^dims.
    """
    if dims not in (1, 2, 3):
        raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
    if rule is None:
        rule = QuadratureRule.gauss_hermite()
    z, w = rule.nodes, rule.weights
    if dims == 1:
        values = np.asarray(f(z), dtype=np.float64)
        weights = w
    elif dims == 2:
        g, b = np.meshgrid(z, z, indexing="ij")
        values = np.asarray(f(g, b), dtype=np.float64)
        weights = w[:, None] * w[None, :]
    else:
        g, b, u = np.meshgrid(z, z, z, indexing="ij")
        values = np.asarray(f(g, b, u), dtype=np.float64)
        weights = w[:, None, None] * w[None, :, None] * w[None, None, :]
    values = np.broadcast_to(values, weights.shape)
    if not np.all(np.isfinite(values)):
        raise ArithmeticError("integrand returned a non-finite value at a quadrature node")
    return float(np.sum(weights * values))


@dataclasses.dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: float
    stderr: float
    min: float
    max: float


def summarize(values):
    """SummaryStats of a 1-D sample; stderr = sample std / sqrt(count)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 1:
        raise ValueError("cannot summarize an empty sample")
    stderr = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return SummaryStats(
        count=int(v.size),
        mean=float(np.mean(v)),
        stderr=stderr,
        min=float(np.min(v)),
        max=float(np.max(v)),
    )


def monte_carlo_expect(f, dims, n_samples, stream):
    """Plain Monte Carlo estimate of E[f(Z_1, ..., Z_dims)]."""
    if dims not in (1, 2, 3):
        raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples, got {n_samples}")
    draws = stream.standard_normal((dims, int(n_samples)))
    values = np.asarray(f(*draws), dtype=np.float64)
    values = np.broadcast_to(values, (int(n_samples),))
    if not np.all(np.isfinite(values)):
        raise ArithmeticError("integrand returned a non-finite sample")
    return summarize(values)


def wilson_interval(successes, trials, confidence=0.95):
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes {successes} outside [0, {trials}]")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    z = float(ndtri(0.5 + confidence / 2.0))
    n = float(trials)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2.0 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    # at the boundaries the score equation has an exact root at 0 or 1
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


def normality_check(samples):
    """One-sample KS statistic against N(0,1) plus raw moments 1 through 4."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 30:
        raise ValueError(f"need at least 30 samples, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise ArithmeticError("samples contain non-finite entries")
    n = s.size
    s = np.sort(s)
    cdf = ndtr(s)
    steps = np.arange(1, n + 1, dtype=np.float64) / n
    ks = float(max(np.max(steps - cdf), np.max(cdf - steps + 1.0 / n)))
    moments = tuple(float(np.mean(s ** k)) for k in (1, 2, 3, 4))
    return ks, moments


def ensure_finite(arr, name):
    """Reject arrays with NaN or infinity; returns the array unchanged."""
    if not np.all(np.isfinite(arr)):
        raise ArithmeticError(f"{name} contains non-finite entries")
    return arr
