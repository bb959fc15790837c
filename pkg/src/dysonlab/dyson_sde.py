"""Forward simulation of the repulsive-drift particle SDE

    dX_j = (beta/2) sum_{i != j} dt / (X_j - X_i) + dB_j,

plus an exact fixed-time random-matrix oracle for validating the integrator
distributionally, and mean-curve estimation for path centering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite

from . import _kernels
from .core import (
    DysonParams,
    McEstimate,
    PathBundle,
    PathEnsemble,
    RngStream,
    TimeGrid,
)
from .parallel import make_shards, run_shards

__all__ = [
    "IntegratorError",
    "IntegratorReport",
    "MeanCurves",
    "boundary_spread",
    "drift_vector",
    "simulate_dbm",
    "simulate_ensemble",
    "sample_fixed_time_oracle",
    "sample_oracle_ensemble",
    "estimate_mean_curves",
    "oracle_second_moment",
]

EPS_SPREAD = 1e-3


class IntegratorError(RuntimeError):
    """Adaptive substepping could not maintain strict ordering with dt >= dt_min."""


@dataclass(frozen=True)
class IntegratorReport:
    """Diagnostics of one (or one batch of) integrator run(s).

    min_gap_seen > 0 always: the integrator never records a collision.
    """

    n_substeps_total: int
    min_gap_seen: float
    dt_rejections: int

    def __post_init__(self):
        if not self.min_gap_seen > 0:
            raise ValueError("min_gap_seen must be positive (no collisions recorded)")

    def merged(self, other: "IntegratorReport") -> "IntegratorReport":
        return IntegratorReport(
            self.n_substeps_total + other.n_substeps_total,
            min(self.min_gap_seen, other.min_gap_seen),
            self.dt_rejections + other.dt_rejections,
        )


def drift_vector(x, beta: float) -> np.ndarray:
    """Repulsive drift (beta/2) sum_{j != i} 1/(x_i - x_j) at state x."""
    x = np.asarray(x, dtype=float)
    return _kernels.pairwise_drift(x, float(beta))


@lru_cache(maxsize=64)
def _hermite_profile(k: int) -> np.ndarray:
    """Descending roots of the degree-k (physicists') Hermite polynomial.

    A coincident k-particle block evolved by the pure drift flow for time dt
    separates exactly into mean + sqrt(beta*dt) * roots: the roots satisfy
    sum_{j != i} 1/(h_i - h_j) = h_i, which makes the self-similar profile an
    exact solution of the drift ODE started from a tie.
    """
    h = np.sort(roots_hermite(k)[0])[::-1].copy()
    h.setflags(write=False)
    return h


def boundary_spread(x_start, beta: float, dt0: float, dt_min: float) -> np.ndarray:
    """Replace tied blocks by the drift-flow exit profile at time scale dt0.

    Ties are first perturbed by +/- EPS_SPREAD*sqrt(dt_min) (fixing the order
    within a block), then each block is spread to mean + sqrt(beta*dt0) times
    the Hermite-root profile, the exact pure-drift escape from a coincident
    block.  The spread is shrunk when needed so it cannot cross neighbouring
    particles.
    """
    x = np.asarray(x_start, dtype=float).copy()
    n = x.size
    eps = EPS_SPREAD * np.sqrt(dt_min)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        k = j - i + 1
        if k > 1:
            h = _hermite_profile(k)
            scale = np.sqrt(beta * dt0)
            # keep the block inside the gaps to its distinct neighbours
            if i > 0:
                gap_up = x[i - 1] - x[i]
                scale = min(scale, 0.45 * gap_up / h[0])
            if j + 1 < n:
                gap_dn = x[i] - x[j + 1]
                scale = min(scale, 0.45 * gap_dn / h[0])
            x[i : j + 1] = x[i] + (scale + eps) * h
        i = j + 1
    return x


def _prepare_start(params: DysonParams, grid: TimeGrid) -> np.ndarray:
    x0 = np.asarray(params.x_start, dtype=float)
    if params.n_particles == 1:
        return x0.copy()
    if np.all(x0[:-1] > x0[1:]):
        return x0.copy()
    dt0 = min(params.dt_base, float(grid.times[1] - grid.times[0]))
    x0 = boundary_spread(x0, params.beta, dt0, params.dt_min)
    if not np.all(x0[:-1] > x0[1:]):
        raise IntegratorError(
            "could not spread boundary start into a strictly ordered state; "
            "neighbouring particles are too close"
        )
    return x0


def _check_grid(params: DysonParams, grid: TimeGrid) -> None:
    scale = max(1.0, abs(params.horizon))
    if abs(grid.a) > 1e-12 * scale:
        raise ValueError("grid must start at time 0")
    if abs(grid.b - params.horizon) > 1e-12 * scale:
        raise ValueError("grid must end at params.horizon")


def simulate_dbm(
    params: DysonParams, grid: TimeGrid, rng: RngStream
) -> tuple[PathBundle, IntegratorReport]:
    """One sample path on the grid, strictly ordered at every recorded time.

    Raises IntegratorError when adaptive substepping cannot maintain ordering
    with dt >= dt_min (parameters too aggressive).
    """
    _check_grid(params, grid)
    x0 = _prepare_start(params, grid)
    gen = rng.generator()
    values, status, n_sub, n_rej, min_gap = _kernels.dbm_integrate(
        x0,
        np.asarray(grid.times),
        float(params.beta),
        float(params.dt_base),
        float(params.dt_min),
        float(params.gap_safety),
        gen,
    )
    if status != 0:
        raise IntegratorError(
            f"ordering rejected at the dt_min floor (dt_min={params.dt_min:g}, "
            f"after {n_rej} rejections)"
        )
    report = IntegratorReport(int(n_sub), float(min_gap), int(n_rej))
    return PathBundle(grid, values, ordered=params.n_particles > 1, layer_lo=1), report


def _sde_shard(args):
    params, times, rng, start, stop = args
    grid = TimeGrid(times)
    n = params.n_particles
    out = np.empty((stop - start, n, times.size))
    n_sub = 0
    n_rej = 0
    min_gap = np.inf
    x0 = _prepare_start(params, grid)
    tvec = np.asarray(times)
    for r in range(start, stop):
        gen = rng.child("replica", r).generator()
        values, status, ns, nr, mg = _kernels.dbm_integrate(
            x0.copy(),
            tvec,
            float(params.beta),
            float(params.dt_base),
            float(params.dt_min),
            float(params.gap_safety),
            gen,
        )
        if status != 0:
            return None, r
        out[r - start] = values
        n_sub += int(ns)
        n_rej += int(nr)
        min_gap = min(min_gap, float(mg))
    return (out, n_sub, n_rej, min_gap), -1


def simulate_ensemble(
    params: DysonParams,
    grid: TimeGrid,
    n_replicas: int,
    rng: RngStream,
    n_workers: int = 1,
) -> tuple[PathEnsemble, IntegratorReport]:
    """A batch of independent sample paths; replica r uses the stream
    derived from (rng, "replica", r), so results do not depend on sharding
    or worker count."""
    _check_grid(params, grid)
    times = np.asarray(grid.times)
    shards = make_shards(n_replicas)
    args = [(params, times, rng, a, b) for a, b in shards]
    results = run_shards(_sde_shard, args, n_workers)
    blocks = []
    n_sub = 0
    n_rej = 0
    min_gap = np.inf
    for res, fail_r in results:
        if res is None:
            raise IntegratorError(f"replica {fail_r}: ordering rejected at the dt_min floor")
        block, ns, nr, mg = res
        blocks.append(block)
        n_sub += ns
        n_rej += nr
        min_gap = min(min_gap, mg)
    values = np.concatenate(blocks, axis=0)
    return PathEnsemble(grid, values), IntegratorReport(n_sub, min_gap, n_rej)


# ---------------------------------------------------------------------------
# Fixed-time random-matrix oracle
# ---------------------------------------------------------------------------

def oracle_second_moment(beta: float, n_particles: int, t: float) -> float:
    """E[sum_j X_j(t)^2] for the process started at the origin.

    Ito applied to sum X_j^2: the pairwise cross terms
    X_j/(X_j-X_i) + X_i/(X_i-X_j) = 1 contribute beta per pair, the noise
    contributes 1 per coordinate, so the total is (N + beta*N*(N-1)/2) * t.
    """
    n = n_particles
    return (n + beta * n * (n - 1) / 2.0) * t


def _tridiagonal_sample(beta: float, n: int, gen: np.random.Generator) -> np.ndarray:
    """Eigenvalues of the tridiagonal Gaussian beta-ensemble.

    Diagonal N(0,2)/sqrt(2) = N(0,1), off-diagonal chi_{beta*k}/sqrt(2) for
    k = n-1..1; the eigenvalue density is then proportional to
    prod |l_i - l_j|^beta * exp(-sum l_i^2 / 2).
    """
    diag = gen.standard_normal(n)
    if n == 1:
        return diag
    dof = beta * np.arange(n - 1, 0, -1, dtype=float)
    off = np.sqrt(gen.chisquare(dof)) / np.sqrt(2.0)
    from scipy.linalg import eigvalsh_tridiagonal

    return eigvalsh_tridiagonal(diag, off)


def _hermitian_batch(n: int, t: float, n_samples: int, gen: np.random.Generator) -> np.ndarray:
    """Eigenvalues (each row descending) of Hermitian matrices with
    Brownian-law entries at time t: real diagonal variance t, off-diagonal
    real/imaginary parts variance t/2 each."""
    diag = gen.standard_normal((n_samples, n)) * np.sqrt(t)
    re = gen.standard_normal((n_samples, n, n)) * np.sqrt(t / 2.0)
    im = gen.standard_normal((n_samples, n, n)) * np.sqrt(t / 2.0)
    a = np.zeros((n_samples, n, n), dtype=complex)
    iu = np.triu_indices(n, k=1)
    a[:, iu[0], iu[1]] = re[:, iu[0], iu[1]] + 1j * im[:, iu[0], iu[1]]
    a = a + np.conj(np.swapaxes(a, 1, 2))
    idx = np.arange(n)
    a[:, idx, idx] = diag
    ev = np.linalg.eigvalsh(a)
    return ev[:, ::-1]


def sample_fixed_time_oracle(
    beta: float, n_particles: int, t: float, rng: RngStream
) -> np.ndarray:
    """Exact sample (descending) of the time-t marginal started at the origin.

    beta=2 uses the Hermitian matrix model directly.  Other beta values use
    the tridiagonal Gaussian beta-ensemble, rescaled by the unique positive
    constant that matches E[sum X_j^2] = (N + beta*N*(N-1)/2) * t; for the
    tridiagonal normalization above that constant is sqrt(t).
    """
    if t <= 0:
        raise ValueError("oracle time must be positive")
    if beta <= 0:
        raise ValueError("beta must be positive")
    gen = rng.generator()
    n = n_particles
    if beta == 2.0:
        return _hermitian_batch(n, t, 1, gen)[0]
    lam = _tridiagonal_sample(beta, n, gen)
    model_moment = n + beta * n * (n - 1) / 2.0
    scale = np.sqrt(oracle_second_moment(beta, n, t) / model_moment)
    return np.sort(lam)[::-1] * scale


def _oracle_shard(args):
    beta, n, t, rng, start, stop = args
    gen = rng.child("oracle-shard", start).generator()
    count = stop - start
    if beta == 2.0:
        return _hermitian_batch(n, t, count, gen)
    model_moment = n + beta * n * (n - 1) / 2.0
    scale = np.sqrt(oracle_second_moment(beta, n, t) / model_moment)
    out = np.empty((count, n))
    for r in range(count):
        out[r] = np.sort(_tridiagonal_sample(beta, n, gen))[::-1] * scale
    return out


def sample_oracle_ensemble(
    beta: float,
    n_particles: int,
    t: float,
    n_samples: int,
    rng: RngStream,
    n_workers: int = 1,
) -> np.ndarray:
    """Matrix-oracle samples, shape (n_samples, n_particles), rows descending.

    Draws are blocked per shard (one stream per shard, keyed by the shard's
    first replica index), so results are independent of the worker count.
    """
    if t <= 0:
        raise ValueError("oracle time must be positive")
    shards = make_shards(n_samples)
    args = [(float(beta), int(n_particles), float(t), rng, a, b) for a, b in shards]
    blocks = run_shards(_oracle_shard, args, n_workers)
    return np.concatenate(blocks, axis=0)


# ---------------------------------------------------------------------------
# Mean curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanCurves:
    """Per-(layer, time) Monte Carlo estimates of the mean curves.

    ``means`` and ``std_errors`` are (layers x times); ``estimate`` exposes a
    single cell as a McEstimate.
    """

    grid: TimeGrid
    means: np.ndarray
    std_errors: np.ndarray
    n_replicas: int
    seed: int

    def estimate(self, layer: int, time_index: int) -> McEstimate:
        return McEstimate(
            float(self.means[layer - 1, time_index]),
            float(self.std_errors[layer - 1, time_index]),
            self.n_replicas,
            self.seed,
        )


def estimate_mean_curves(
    params: DysonParams,
    grid: TimeGrid,
    n_replicas: int,
    rng: RngStream,
    n_workers: int = 1,
) -> MeanCurves:
    """Mean curves from an independent replica batch (used to center paths)."""
    if n_replicas < 2:
        raise ValueError("need at least two replicas")
    ens, _ = simulate_ensemble(params, grid, n_replicas, rng, n_workers)
    means = ens.values.mean(axis=0)
    ses = ens.values.std(axis=0, ddof=1) / np.sqrt(n_replicas)
    return MeanCurves(grid, means, ses, n_replicas, rng.master_seed)
