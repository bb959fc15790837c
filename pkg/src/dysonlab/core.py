"""Shared domain types: time grids, path bundles, simulation parameters,
Monte Carlo estimates and the deterministic random-number contract.

Everything here is immutable after construction and safe to share across
workers.  Randomness is counter-based: a (master_seed, stream_id) pair fully
determines a stream, and replica r of a labelled experiment draws from
stream_id = stable_hash(label, r), so parallel runs reproduce bit-identically
regardless of scheduling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "PathBundle",
    "PathEnsemble",
    "DysonParams",
    "McEstimate",
    "RngStream",
    "make_uniform_grid",
    "check_weyl",
    "mc_estimate_from_samples",
    "stream_id_for",
    "replica_stream",
]

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


def check_weyl(x) -> bool:
    """True iff the vector is strictly decreasing (open Weyl chamber).

    Strictness is tested exactly, with no tolerance: simulated paths must
    stay strictly ordered by construction, and a tie is a real collision.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("check_weyl expects a nonempty 1-d vector")
    if x.size == 1:
        return True
    return bool(np.all(x[:-1] > x[1:]))


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing sampling times on an interval [a, b].

    ``times[0]`` is the left endpoint and ``times[-1]`` the right endpoint;
    both are always present.
    """

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("TimeGrid needs at least two times")
        if not np.all(np.isfinite(t)):
            raise ValueError("TimeGrid times must be finite")
        if not np.all(t[1:] > t[:-1]):
            raise ValueError("TimeGrid times must be strictly increasing")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def a(self) -> float:
        return float(self.times[0])

    @property
    def b(self) -> float:
        return float(self.times[-1])

    @property
    def n_times(self) -> int:
        return int(self.times.size)

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        """Index of grid time equal to ``t`` (no interpolation).

        Raises ValueError when ``t`` is not a grid point; callers refine the
        grid instead of interpolating.
        """
        scale = max(1.0, abs(self.a), abs(self.b))
        hits = np.nonzero(np.abs(self.times - t) <= atol * scale)[0]
        if hits.size == 0:
            raise ValueError(f"time {t!r} is not on the grid")
        return int(hits[0])


def make_uniform_grid(a: float, b: float, n_steps: int) -> TimeGrid:
    """Uniform partition of [a, b] into ``n_steps`` panels (n_steps+1 times)."""
    if not (a < b):
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    i = np.arange(n_steps + 1, dtype=float)
    times = a + (b - a) * i / n_steps
    times[0] = a
    times[-1] = b
    return TimeGrid(times)


@dataclass(frozen=True)
class PathBundle:
    """Values of indexed curves on a TimeGrid.

    ``values`` has one row per layer and one column per grid time.  When
    ``ordered`` is set, every time column must be strictly decreasing in the
    layer index (membership in the Weyl chamber), and this is enforced
    exactly at construction.
    """

    grid: TimeGrid
    values: np.ndarray
    ordered: bool = False
    layer_lo: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("PathBundle values must be a (layers x times) matrix")
        if v.shape[1] != self.grid.n_times:
            raise ValueError(
                f"values have {v.shape[1]} columns but grid has {self.grid.n_times} times"
            )
        if self.ordered and v.shape[0] > 1:
            if not np.all(v[:-1, :] > v[1:, :]):
                raise ValueError("ordered=True but some time column is not strictly decreasing")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_layers(self) -> int:
        return int(self.values.shape[0])

    @property
    def layers(self) -> range:
        return range(self.layer_lo, self.layer_lo + self.n_layers)

    def layer(self, j: int) -> np.ndarray:
        """Values of layer ``j`` (indexed from ``layer_lo``)."""
        return self.values[j - self.layer_lo]


@dataclass(frozen=True)
class DysonParams:
    """Parameters of the interacting-particle SDE run.

    ``beta >= 2`` is required: that is the log-concave regime the statistics
    modules rely on.  ``x_start`` must be weakly decreasing (ties allowed,
    they are spread at the first substep).  ``dt_min`` is a failsafe floor
    for the adaptive substepper, not a target resolution.
    """

    beta: float
    n_particles: int
    x_start: np.ndarray
    horizon: float
    dt_base: float = 1e-3
    dt_min: float = 1e-12
    gap_safety: float = 0.05

    def __post_init__(self):
        if not self.beta >= 2.0:
            raise ValueError(f"beta must be >= 2, got {self.beta}")
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        x = np.asarray(self.x_start, dtype=float)
        if x.shape != (self.n_particles,):
            raise ValueError("x_start must have length n_particles")
        if x.size > 1 and not np.all(x[:-1] >= x[1:]):
            raise ValueError("x_start must be weakly decreasing (closed Weyl chamber)")
        if not (self.horizon > 0):
            raise ValueError("horizon must be positive")
        if not (self.dt_base > 0 and self.dt_min > 0):
            raise ValueError("dt_base and dt_min must be positive")
        if self.dt_min > self.dt_base:
            raise ValueError("dt_min must not exceed dt_base")
        if not (0.0 < self.gap_safety < 1.0):
            raise ValueError("gap_safety must lie in (0, 1)")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "x_start", x)


@dataclass(frozen=True)
class McEstimate:
    """Point estimate of a scalar statistic with its Monte Carlo error.

    ``std_error`` is sample-std / sqrt(n_replicas) for i.i.d. replicas.
    ``seed`` records the master seed that produced the replicas.
    """

    mean: float
    std_error: float
    n_replicas: int
    seed: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be positive")

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return (self.mean - z * self.std_error, self.mean + z * self.std_error)


def mc_estimate_from_samples(samples: np.ndarray, seed: int) -> McEstimate:
    """McEstimate from i.i.d. scalar samples (ddof=1 standard error)."""
    s = np.asarray(samples, dtype=float).ravel()
    n = s.size
    if n < 2:
        raise ValueError("need at least two replicas for a standard error")
    return McEstimate(
        mean=float(s.mean()),
        std_error=float(s.std(ddof=1) / np.sqrt(n)),
        n_replicas=n,
        seed=int(seed),
    )


@dataclass(frozen=True)
class PathEnsemble:
    """A batch of same-grid paths: values has shape (replicas, layers, times)."""

    grid: TimeGrid
    values: np.ndarray
    layer_lo: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("PathEnsemble values must be (replicas x layers x times)")
        if v.shape[2] != self.grid.n_times:
            raise ValueError("ensemble time axis does not match the grid")
        object.__setattr__(self, "values", v)

    @property
    def n_replicas(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_layers(self) -> int:
        return int(self.values.shape[1])

    def bundle(self, r: int, ordered: bool = False) -> PathBundle:
        return PathBundle(self.grid, self.values[r], ordered=ordered, layer_lo=self.layer_lo)


def stream_id_for(label: str, index: int) -> int:
    """Stable 64-bit stream id for replica ``index`` of experiment ``label``.

    Uses blake2b, not Python's randomized hash, so ids are reproducible
    across processes and runs.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(label.encode("utf-8"))
    h.update(b"\x00")
    h.update(int(index).to_bytes(8, "little", signed=False))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (master_seed, stream_id) determines all draws.

    Distinct stream_ids give statistically independent streams (Philox
    keying).  A stream instance is owned by exactly one worker at a time.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.master_seed & _MASK64, self.stream_id & _MASK64], dtype=_U64
        )
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, label: str, index: int = 0) -> "RngStream":
        """Derived stream for sub-experiments; mixes the current stream_id in."""
        h = hashlib.blake2b(digest_size=8)
        h.update(int(self.stream_id & _MASK64).to_bytes(8, "little"))
        h.update(label.encode("utf-8"))
        h.update(int(index).to_bytes(8, "little", signed=False))
        return RngStream(self.master_seed, int.from_bytes(h.digest(), "little"))


def replica_stream(master_seed: int, label: str, index: int) -> RngStream:
    """Stream for replica ``index`` of the experiment named ``label``."""
    return RngStream(master_seed, stream_id_for(label, index))
