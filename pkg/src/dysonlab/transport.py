"""Finite-dimensional optimal-transport checks.

For a log-concave tilt of a Gaussian, the Brenier map pushing the Gaussian
onto the tilt is a contraction (Caffarelli), and centered expectations of
convex test functions under the tilt are dominated by the Gaussian ones
(Harge).  This module witnesses both numerically: monotone-rearrangement
maps and Lipschitz estimates in one dimension, an entropic surrogate in two
dimensions, importance-sampled convex-order comparisons, and midpoint
log-concavity scans of tabulated densities.  Negative controls must fail:
the checker is only trusted because it can reject.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .core import RngStream
from .girsanov import ConvexFn, DegenerateWeightsError, midpoint_convexity_violations

__all__ = [
    "TiltedGaussian1D",
    "TabulatedMap",
    "brenier_map_1d",
    "contraction_check",
    "HargeRow",
    "TransportCheckReport",
    "harge_check",
    "SinkhornMapResult",
    "sinkhorn_map_2d",
    "pairwise_lipschitz",
    "LogConcavityViolation",
    "logconcavity_scan",
]


# ---------------------------------------------------------------------------
# 1-D tilted Gaussians and monotone rearrangement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TiltedGaussian1D:
    """Unnormalized density exp(-V(x)) * phi(x) on a uniform grid.

    The grid spans 8 standard deviations of the tilted measure itself (found
    on a provisional wide grid), with n_grid points; spectral accuracy is
    unnecessary because the downstream checks are about monotonicity and
    slopes.
    """

    tilt: Optional[ConvexFn] = None
    n_grid: int = 4096
    half_width_sds: float = 8.0

    def log_density_unnorm(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = -0.5 * x ** 2
        if self.tilt is not None:
            out = out - self.tilt.batch(x[:, None])
        return out

    def grid_and_density(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered grid plus normalized density values."""
        wide = np.linspace(-12.0, 12.0, 8192)
        ld = self.log_density_unnorm(wide)
        d = np.exp(ld - ld.max())
        mass = np.trapezoid(d, wide)
        if not (np.isfinite(mass) and mass > 0):
            raise ValueError("tilted density has no finite positive mass")
        mean = np.trapezoid(wide * d, wide) / mass
        var = np.trapezoid((wide - mean) ** 2 * d, wide) / mass
        sd = float(np.sqrt(var))
        lo = mean - self.half_width_sds * sd
        hi = mean + self.half_width_sds * sd
        xs = np.linspace(lo, hi, self.n_grid)
        ld = self.log_density_unnorm(xs)
        dens = np.exp(ld - ld.max())
        dens /= np.trapezoid(dens, xs)
        return xs, dens


def _cdf_from_density(xs: np.ndarray, dens: np.ndarray) -> np.ndarray:
    """Trapezoid cumulative sums, normalized to end exactly at 1."""
    inc = 0.5 * (dens[1:] + dens[:-1]) * np.diff(xs)
    cdf = np.concatenate([[0.0], np.cumsum(inc)])
    return cdf / cdf[-1]


@dataclass(frozen=True)
class TabulatedMap:
    """A map tabulated on a grid: x_i -> t_i."""

    xs: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.xs, self.values)


QUANTILE_FLOOR = 1e-12


def brenier_map_1d(
    source: Optional[TiltedGaussian1D], target: TiltedGaussian1D
) -> TabulatedMap:
    """Monotone rearrangement: the quantile coupling F_target^(-1) o F_source.

    ``source=None`` means the standard Gaussian.  The map is tabulated on the
    source grid restricted to quantiles in [QUANTILE_FLOOR, 1-QUANTILE_FLOOR]:
    beyond that range cumulative-sum increments are absorbed by double
    rounding and the inverse is meaningless.  Both CDFs must be strictly
    increasing numerically on that central range, otherwise the grid is too
    coarse for the inverse and the call rejects.
    """
    src = source if source is not None else TiltedGaussian1D()
    xs_s, dens_s = src.grid_and_density()
    xs_t, dens_t = target.grid_and_density()
    cdf_s = _cdf_from_density(xs_s, dens_s)
    cdf_t = _cdf_from_density(xs_t, dens_t)
    keep_s = (cdf_s >= QUANTILE_FLOOR) & (cdf_s <= 1.0 - QUANTILE_FLOOR)
    keep_t = (cdf_t >= QUANTILE_FLOOR) & (cdf_t <= 1.0 - QUANTILE_FLOOR)
    if keep_s.sum() < 3 or keep_t.sum() < 3:
        raise ValueError("CDF not strictly increasing numerically: grid too coarse")
    cs, xs = cdf_s[keep_s], xs_s[keep_s]
    ct, xt = cdf_t[keep_t], xs_t[keep_t]
    if np.any(np.diff(cs) <= 0) or np.any(np.diff(ct) <= 0):
        raise ValueError("CDF not strictly increasing numerically: grid too coarse")
    mapped = np.interp(cs, ct, xt)
    return TabulatedMap(xs, mapped)


def contraction_check(tab_map: TabulatedMap) -> float:
    """Max |dT/dw| over adjacent grid pairs (the Lipschitz witness)."""
    xs = np.asarray(tab_map.xs, dtype=float)
    vals = np.asarray(tab_map.values, dtype=float)
    if xs.size < 3:
        raise ValueError("need the map tabulated on at least 3 points")
    slopes = np.abs(np.diff(vals) / np.diff(xs))
    return float(slopes.max())


# ---------------------------------------------------------------------------
# Convex-order comparison (weighted samples)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HargeRow:
    name: str
    convex: bool
    lhs: float
    rhs: float
    pooled_se: float
    passed: bool


@dataclass(frozen=True)
class TransportCheckReport:
    """Results of transport-side checks: a Lipschitz witness plus the
    convex-order table (lhs = tilted centered expectation, rhs = Gaussian)."""

    max_lipschitz_estimate: float
    harge_table: tuple = ()

    def __post_init__(self):
        if self.max_lipschitz_estimate < 0:
            raise ValueError("max_lipschitz_estimate must be nonnegative")

    def all_passed(self) -> bool:
        return all(r.passed for r in self.harge_table if r.convex)


def _split_weighted_centered_mean(
    samples: np.ndarray, log_w: Optional[np.ndarray], g: Callable[[np.ndarray], np.ndarray]
) -> tuple[float, float]:
    """(estimate, SE) of E[g(w - mean_w)] with the mean taken from an
    independent half of the replicas, so centering noise cannot correlate
    with the evaluation batch."""
    n = samples.shape[0]
    half = n // 2
    a, b = samples[:half], samples[half:]
    if log_w is None:
        mean_vec = a.mean(axis=0)
        vals = g(b - mean_vec[None, :])
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))
    lw_a, lw_b = log_w[:half], log_w[half:]
    wa = np.exp(lw_a - lw_a.max())
    wb = np.exp(lw_b - lw_b.max())
    ess = float(wb.sum() ** 2 / np.sum(wb ** 2))
    if ess < 10.0:
        raise DegenerateWeightsError(f"effective sample size {ess:.2f} < 10")
    mean_vec = (wa[:, None] * a).sum(axis=0) / wa.sum()
    vals = g(b - mean_vec[None, :])
    wn = wb / wb.sum()
    est = float(np.sum(wn * vals))
    se = float(np.sqrt(np.sum(wn ** 2 * (vals - est) ** 2)))
    return est, se


def harge_check(
    gamma_samples: np.ndarray,
    mu_samples: np.ndarray,
    mu_log_weights: Optional[np.ndarray],
    test_fns: Sequence[tuple[str, Callable[[np.ndarray], np.ndarray]]],
    rng: RngStream,
    lipschitz: float = 0.0,
    convexity_triples: int = 1000,
) -> TransportCheckReport:
    """Convex-order comparison of a log-concave tilt against its Gaussian.

    ``gamma_samples`` (R x d) are Gaussian draws; ``mu_samples`` with
    ``mu_log_weights`` represent the tilt as a self-normalized weighted
    sample (weights None means the tilt is trivial).  Each test function g
    is screened for midpoint convexity first; for convex g the verdict is
    E_mu[g(w - mean_mu)] <= E_gamma[g(w - mean_gamma)] + 3 pooled SE.
    Non-convex entries are flagged (convex=False) and never counted as
    passing.
    """
    d = gamma_samples.shape[1]
    rows = []
    for i, (name, g) in enumerate(test_fns):
        def scalar_g(v, _g=g):
            return float(_g(np.asarray(v, dtype=float)[None, :])[0])

        n_bad = midpoint_convexity_violations(
            scalar_g, d, rng.child("convexity-screen", i), n_triples=convexity_triples
        )
        convex = n_bad == 0
        lhs, se_l = _split_weighted_centered_mean(mu_samples, mu_log_weights, g)
        rhs, se_r = _split_weighted_centered_mean(gamma_samples, None, g)
        pooled = float(np.sqrt(se_l ** 2 + se_r ** 2))
        passed = bool(convex and lhs <= rhs + 3.0 * pooled)
        rows.append(HargeRow(name, convex, lhs, rhs, pooled, passed))
    return TransportCheckReport(lipschitz, tuple(rows))


# ---------------------------------------------------------------------------
# 2-D entropic surrogate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SinkhornMapResult:
    """Barycentric map from an entropic plan, with convergence diagnostics."""

    source: np.ndarray
    mapped: np.ndarray
    converged: bool
    marginal_error: float
    n_iterations: int
    lipschitz_estimate: float


def pairwise_lipschitz(
    xs: np.ndarray,
    mapped: np.ndarray,
    rng: RngStream,
    n_pairs: int = 4000,
    min_separation: float = 0.25,
) -> float:
    """Max secant slope |T(x_i)-T(x_j)| / |x_i-x_j| over random sample pairs.

    Pairs closer than ``min_separation`` are skipped: the entropic map is
    only an O(eps) surrogate, and secants below that scale measure its bias
    rather than the transport's Lipschitz constant.
    """
    n = xs.shape[0]
    gen = rng.generator()
    ii = gen.integers(0, n, size=n_pairs)
    jj = gen.integers(0, n, size=n_pairs)
    dx = np.linalg.norm(xs[ii] - xs[jj], axis=1)
    keep = dx >= min_separation
    if not np.any(keep):
        raise ValueError("no sample pairs above the separation floor")
    dt = np.linalg.norm(mapped[ii][keep] - mapped[jj][keep], axis=1)
    return float(np.max(dt / dx[keep]))


def sinkhorn_map_2d(
    source_samples: np.ndarray,
    target_samples: np.ndarray,
    epsilon: float,
    n_iter: int,
    rng: Optional[RngStream] = None,
    marginal_tol: float = 1e-6,
) -> SinkhornMapResult:
    """Entropic plan by alternating scaling, then the barycentric map.

    Iterates to L1 marginal tolerance ``marginal_tol``; hitting ``n_iter``
    first is reported in the result, never silently ignored.  The dense cost
    matrix is materialized, so sample counts are limited by memory
    (n*m doubles).
    """
    xs = np.ascontiguousarray(np.asarray(source_samples, dtype=float))
    ys = np.ascontiguousarray(np.asarray(target_samples, dtype=float))
    if xs.ndim != 2 or ys.ndim != 2 or xs.shape[1] != ys.shape[1]:
        raise ValueError("need sample arrays of shape (n, d) with matching d")
    if xs.shape[0] == 0 or ys.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if xs.shape[0] * ys.shape[0] > 5e7:
        raise ValueError("sample sets too large for a dense cost matrix")
    cost = ((xs[:, None, :] - ys[None, :, :]) ** 2).sum(axis=2)
    f, g, err, it = _kernels.sinkhorn_potentials(
        cost, float(epsilon), int(n_iter), float(marginal_tol)
    )
    mapped = _kernels.sinkhorn_barycentric(cost, ys, g, float(epsilon))
    stream = rng if rng is not None else RngStream(0, 0)
    lip = pairwise_lipschitz(xs, mapped, stream.child("lipschitz-pairs"))
    return SinkhornMapResult(
        source=xs,
        mapped=mapped,
        converged=bool(err <= marginal_tol),
        marginal_error=float(err),
        n_iterations=int(it),
        lipschitz_estimate=lip,
    )


# ---------------------------------------------------------------------------
# Midpoint log-concavity scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogConcavityViolation:
    """A midpoint triple u, (u+v)/2, v with log f(mid) below the chord by
    more than the tolerance."""

    index_u: tuple
    index_v: tuple
    deficit: float


def _scan_1d_line(values: np.ndarray, tol: float):
    """All same-parity index pairs along a 1-d line of log-density values."""
    n = values.size
    out = []
    for k in range(1, (n - 1) // 2 + 1):
        mid = values[k:n - k]
        chord = 0.5 * (values[: n - 2 * k] + values[2 * k :])
        d = mid - chord
        bad = np.nonzero(d < -tol)[0]
        for i in bad:
            out.append((int(i), int(i + 2 * k), float(d[i])))
    return out


def logconcavity_scan(values: np.ndarray, tol: float) -> list[LogConcavityViolation]:
    """Midpoint concavity scan of tabulated log-density values on a uniform grid.

    Checks every axis-aligned triple (1-d and 2-d) and, in 2-d, both diagonal
    directions.  Returns the violating triples; an empty list is a pass.
    """
    v = np.asarray(values, dtype=float)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    out: list[LogConcavityViolation] = []
    if v.ndim == 1:
        for i, j, d in _scan_1d_line(v, tol):
            out.append(LogConcavityViolation((i,), (j,), d))
        return out
    if v.ndim != 2:
        raise ValueError("scan supports 1-d and 2-d tables")
    n_r, n_c = v.shape
    for r in range(n_r):
        for i, j, d in _scan_1d_line(v[r], tol):
            out.append(LogConcavityViolation((r, i), (r, j), d))
    for c in range(n_c):
        for i, j, d in _scan_1d_line(v[:, c], tol):
            out.append(LogConcavityViolation((i, c), (j, c), d))
    # diagonal directions (1, 1) and (1, -1)
    for off in range(-(n_r - 1), n_c):
        diag = np.diagonal(v, offset=off)
        base_r = max(0, -off)
        base_c = max(0, off)
        for i, j, d in _scan_1d_line(diag, tol):
            out.append(
                LogConcavityViolation((base_r + i, base_c + i), (base_r + j, base_c + j), d)
            )
    flipped = v[:, ::-1]
    for off in range(-(n_r - 1), n_c):
        diag = np.diagonal(flipped, offset=off)
        base_r = max(0, -off)
        base_c = max(0, off)
        for i, j, d in _scan_1d_line(diag, tol):
            out.append(
                LogConcavityViolation(
                    (base_r + i, n_c - 1 - (base_c + i)),
                    (base_r + j, n_c - 1 - (base_c + j)),
                    d,
                )
            )
    return out
