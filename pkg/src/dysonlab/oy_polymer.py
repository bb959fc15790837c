"""Semi-discrete directed polymer: the top line of the O'Connell-Yor ensemble.

The top line is the log partition function of up-right paths through N
Brownian levels,

    Z(t) = int_{0<s_1<...<s_{N-1}<t} exp(B_1(s_1) + [B_2(s_2)-B_2(s_1)] + ...
                                          + [B_N(t)-B_N(s_{N-1})]) ds,

simulated here by discretizing each level on a uniform grid and folding the
levels together with an iterated trapezoid rule, run entirely in log space
(a log-sum-exp dynamic program): Z overflows doubles at moderate horizons.
This provides a second log-concave-perturbation member for the modulus test
suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import PathBundle, PathEnsemble, RngStream, TimeGrid
from .scaling_stats import (
    ModulusReport,
    center_ensemble,
    holder_moment_entries,
    increment_moment,
    select_window_pairs,
)

__all__ = [
    "PolymerParams",
    "top_line_from_levels",
    "sample_level_paths",
    "polymer_free_energy",
    "polymer_ensemble",
    "oy_modulus_suite",
]

MIN_STEPS_PER_LEVEL = 50


@dataclass(frozen=True)
class PolymerParams:
    """Polymer discretization parameters.

    ``drift`` must be weakly decreasing.  ``m_steps`` is the time-grid panel
    count; sampling requires m_steps >= 50 * n_levels so the jump-time
    quadrature resolves the Brownian environment.
    """

    n_levels: int
    drift: np.ndarray
    t_max: float
    m_steps: int
    n_replicas: int = 1000

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValueError("n_levels must be a positive integer")
        lam = np.asarray(self.drift, dtype=float)
        if lam.shape != (self.n_levels,):
            raise ValueError("drift must have length n_levels")
        if lam.size > 1 and not np.all(lam[:-1] >= lam[1:]):
            raise ValueError("drift must be weakly decreasing (closed Weyl chamber)")
        if not (self.t_max > 0):
            raise ValueError("t_max must be positive")
        if self.m_steps < 1:
            raise ValueError("m_steps must be positive")
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be positive")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "drift", lam)

    def grid(self) -> TimeGrid:
        times = np.linspace(0.0, self.t_max, self.m_steps + 1)
        times[-1] = self.t_max
        return TimeGrid(times)


def top_line_from_levels(levels: np.ndarray, dt: float) -> np.ndarray:
    """log Z at every grid time for a fixed noise realization.

    ``levels`` is (n_levels x (m+1)): each level's path values on the grid
    (drift included).  Monotone in every entry of the environment: raising
    any level value weakly raises log Z.
    """
    levels = np.ascontiguousarray(np.asarray(levels, dtype=float))
    if levels.ndim != 2:
        raise ValueError("levels must be (n_levels x grid)")
    return _kernels.polymer_top_line(levels, float(dt))


def sample_level_paths(params: PolymerParams, gen: np.random.Generator) -> np.ndarray:
    """Brownian level paths with drift, shape (n_levels x (m+1)), zero at t=0."""
    times = np.asarray(params.grid().times)
    dt = np.diff(times)
    steps = gen.standard_normal((params.n_levels, dt.size)) * np.sqrt(dt)
    b = np.concatenate([np.zeros((params.n_levels, 1)), np.cumsum(steps, axis=1)], axis=1)
    return b + np.asarray(params.drift)[:, None] * times[None, :]


def polymer_free_energy(params: PolymerParams, rng: RngStream) -> PathBundle:
    """One sampled top line on the grid (single-layer bundle).

    The first grid point carries no mass for n_levels >= 2 (no path has
    arrived yet), so the returned bundle starts at the first strictly
    positive grid time in that case.
    """
    if params.m_steps < MIN_STEPS_PER_LEVEL * params.n_levels:
        raise ValueError(
            f"m_steps={params.m_steps} too small: need >= {MIN_STEPS_PER_LEVEL}*n_levels"
        )
    gen = rng.generator()
    levels = sample_level_paths(params, gen)
    dt = params.t_max / params.m_steps
    logz = top_line_from_levels(levels, dt)
    times = np.asarray(params.grid().times)
    start = params.n_levels - 1 if params.n_levels > 1 else 0
    return PathBundle(TimeGrid(times[start:]), logz[None, start:], ordered=False)


def polymer_ensemble(params: PolymerParams, n_replicas: int, rng: RngStream) -> PathEnsemble:
    """A batch of top lines; replica r draws from the (rng, "replica", r) stream."""
    if params.m_steps < MIN_STEPS_PER_LEVEL * params.n_levels:
        raise ValueError(
            f"m_steps={params.m_steps} too small: need >= {MIN_STEPS_PER_LEVEL}*n_levels"
        )
    times = np.asarray(params.grid().times)
    dt = params.t_max / params.m_steps
    start = params.n_levels - 1 if params.n_levels > 1 else 0
    out = np.empty((n_replicas, 1, times.size - start))
    for r in range(n_replicas):
        gen = rng.child("replica", r).generator()
        levels = sample_level_paths(params, gen)
        out[r, 0] = top_line_from_levels(levels, dt)[start:]
    return PathEnsemble(TimeGrid(times[start:]), out)


def oy_modulus_suite(
    params: PolymerParams,
    alpha: float,
    window: tuple[float, float],
    rng: RngStream,
    p_values=(1.0, 2.0),
    holder_p: float = 2.0,
) -> ModulusReport:
    """Centered-top-line modulus statistics on a window inside (0, t_max].

    Centering uses an independent replica batch of the same size; increment
    moments are compared against the Brownian baseline bounds, and Holder
    moments are reported for downstream scaling analysis.
    """
    a, b = float(window[0]), float(window[1])
    if not (0.0 < a < b <= params.t_max + 1e-12):
        raise ValueError("window must lie inside (0, t_max]")
    main = polymer_ensemble(params, params.n_replicas, rng.child("main"))
    center_batch = polymer_ensemble(params, params.n_replicas, rng.child("center"))
    centered = center_ensemble(main, center_batch.values.mean(axis=0))
    pairs = select_window_pairs(centered.grid, a, b)
    moment_rows = []
    for p in p_values:
        moment_rows.extend(increment_moment(centered, float(p), pairs))
    holder_rows = holder_moment_entries(centered, alpha, a, b, holder_p)
    return ModulusReport(
        n_replicas=params.n_replicas,
        seed=rng.master_seed,
        moment_rows=tuple(moment_rows),
        holder_rows=tuple(holder_rows),
    )
