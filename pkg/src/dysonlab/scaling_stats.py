"""Edge scaling, path centering, and modulus-of-continuity statistics.

The statistics mirror what a Brownian baseline satisfies exactly: increment
p-moments against N_p |t-s|^{p/2} with N_p the standard-normal absolute
moment, the sup of log-normalized increments with its Gaussian-type tail,
and Holder-norm scaling in the window length.  Suprema are taken over grid
pairs only, so the one-sided comparisons stay valid a fortiori for the
discretized statistic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .core import McEstimate, PathBundle, PathEnsemble, TimeGrid

__all__ = [
    "normal_abs_moment",
    "EdgeScalingParams",
    "edge_scale",
    "edge_scale_marginal",
    "center_paths",
    "center_ensemble",
    "MomentEntry",
    "increment_moment",
    "sup_modulus_statistic",
    "sup_modulus_samples",
    "holder_norm",
    "holder_samples",
    "TailCurve",
    "tail_curve",
    "HolderEntry",
    "holder_moment_entries",
    "ModulusReport",
    "select_window_pairs",
    "window_ensemble",
]


def normal_abs_moment(p: float) -> float:
    """E|N|^p for a standard normal: 2^(p/2) Gamma((p+1)/2) / sqrt(pi)."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    return float(np.exp(0.5 * p * np.log(2.0) + gammaln((p + 1.0) / 2.0) - 0.5 * np.log(np.pi)))


# ---------------------------------------------------------------------------
# Edge scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeScalingParams:
    """Affine space / reparametrized time map toward the edge ensemble.

    Scaled time t corresponds to original time (2/beta) (1 + t / N^(1/3));
    those pre-image times must stay positive on the whole window.
    """

    beta: float
    n_particles: int
    t_window: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.t_window
        if not (lo <= hi):
            raise ValueError("t_window must be ordered")
        if self.preimage_time(lo) <= 0:
            raise ValueError("pre-image times must be positive on the window")

    def preimage_time(self, t: float) -> float:
        n13 = self.n_particles ** (1.0 / 3.0)
        return (2.0 / self.beta) * (1.0 + t / n13)

    def scaled_time(self, tau: float) -> float:
        n13 = self.n_particles ** (1.0 / 3.0)
        return (tau * self.beta / 2.0 - 1.0) * n13


def edge_scale_marginal(samples: np.ndarray, beta: float, n_particles: int, t: float = 0.0) -> np.ndarray:
    """Edge map applied to fixed-time samples taken at the pre-image time of t:

        N^(1/6) x - 2 N^(2/3) - t N^(1/3) + t^2 / 4.
    """
    n = float(n_particles)
    x = np.asarray(samples, dtype=float)
    return n ** (1.0 / 6.0) * x - 2.0 * n ** (2.0 / 3.0) - t * n ** (1.0 / 3.0) + t * t / 4.0


def edge_scale(path: PathBundle, params: EdgeScalingParams) -> PathBundle:
    """Apply the edge map to a path whose grid contains the pre-image times.

    The output lives on the scaled times recovered from the input grid; the
    window endpoints must be present (no interpolation).
    """
    if path.n_layers != params.n_particles:
        raise ValueError("path layer count does not match n_particles")
    lo, hi = params.t_window
    scaled = np.array([params.scaled_time(tau) for tau in path.grid.times])
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    mask = (scaled >= lo - tol) & (scaled <= hi + tol)
    if not np.any(mask):
        raise ValueError("grid contains no pre-image times of the scaled window")
    sel = np.nonzero(mask)[0]
    t_sel = scaled[sel]
    if abs(t_sel[0] - lo) > tol or abs(t_sel[-1] - hi) > tol:
        raise ValueError("grid is missing the pre-image of a window endpoint")
    n = float(params.n_particles)
    vals = path.values[:, sel]
    out = (
        n ** (1.0 / 6.0) * vals
        - 2.0 * n ** (2.0 / 3.0)
        - t_sel[None, :] * n ** (1.0 / 3.0)
        + (t_sel ** 2 / 4.0)[None, :]
    )
    return PathBundle(TimeGrid(t_sel), out, ordered=path.ordered, layer_lo=path.layer_lo)


# ---------------------------------------------------------------------------
# Centering
# ---------------------------------------------------------------------------

def center_ensemble(ens: PathEnsemble, mean_curves: np.ndarray) -> PathEnsemble:
    """Subtract per-(layer, time) mean curves estimated from an independent batch."""
    m = np.asarray(mean_curves, dtype=float)
    if m.shape != ens.values.shape[1:]:
        raise ValueError("mean curves do not match the ensemble (layers x times)")
    return PathEnsemble(ens.grid, ens.values - m[None, :, :], layer_lo=ens.layer_lo)


def center_paths(paths, mean_curves: np.ndarray):
    """Center a PathEnsemble or a collection of same-grid PathBundles."""
    if isinstance(paths, PathEnsemble):
        return center_ensemble(paths, mean_curves)
    m = np.asarray(mean_curves, dtype=float)
    out = []
    for p in paths:
        if m.shape != p.values.shape:
            raise ValueError("mean curves do not match the path (layers x times)")
        out.append(PathBundle(p.grid, p.values - m, ordered=False, layer_lo=p.layer_lo))
    return out


# ---------------------------------------------------------------------------
# Increment moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentEntry:
    """One (layer, pair, p) cell: the empirical moment, its Brownian bound,
    and the one-sided verdict mean <= bound * (1 + 3 * relative SE)."""

    layer: int
    t_lo: float
    t_hi: float
    p: float
    mean: float
    std_error: float
    n_replicas: int
    bound: float
    passed: bool

    def estimate(self, seed: int = 0) -> McEstimate:
        return McEstimate(self.mean, self.std_error, self.n_replicas, seed)


def increment_moment(
    ensemble: PathEnsemble,
    p: float,
    pairs: Sequence[tuple[float, float]],
) -> list[MomentEntry]:
    """Empirical E|z(t) - z(s)|^p per layer and pair, on a centered ensemble."""
    if p < 1:
        raise ValueError("p must be >= 1")
    grid = ensemble.grid
    r = ensemble.n_replicas
    out = []
    for s, t in pairs:
        i = grid.index_of(min(s, t))
        j = grid.index_of(max(s, t))
        if i == j:
            raise ValueError("pair times must be distinct")
        dt = float(grid.times[j] - grid.times[i])
        inc = np.abs(ensemble.values[:, :, j] - ensemble.values[:, :, i]) ** p  # (R, L)
        mean = inc.mean(axis=0)
        se = inc.std(axis=0, ddof=1) / np.sqrt(r)
        bound = normal_abs_moment(p) * dt ** (p / 2.0)
        for layer_idx in range(ensemble.n_layers):
            m = float(mean[layer_idx])
            e = float(se[layer_idx])
            slack = bound * (1.0 + 3.0 * e / m) if m > 0 else bound
            out.append(
                MomentEntry(
                    layer=ensemble.layer_lo + layer_idx,
                    t_lo=float(grid.times[i]),
                    t_hi=float(grid.times[j]),
                    p=p,
                    mean=m,
                    std_error=e,
                    n_replicas=r,
                    bound=bound,
                    passed=bool(m <= slack),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Sup statistics
# ---------------------------------------------------------------------------

def _window_indices(grid: TimeGrid, a: float, b: float) -> np.ndarray:
    tol = 1e-12 * max(1.0, abs(grid.a), abs(grid.b))
    sel = np.nonzero((grid.times >= a - tol) & (grid.times <= b + tol))[0]
    if sel.size < 2:
        raise ValueError("window must contain at least two grid points")
    return sel


def _single_layer(path: PathBundle, layer: Optional[int]) -> np.ndarray:
    if layer is not None:
        return path.layer(layer)
    if path.n_layers != 1:
        raise ValueError("pass layer=... for a multi-layer path")
    return path.values[0]


def sup_modulus_statistic(
    path: PathBundle, a: float, b: float, layer: Optional[int] = None
) -> float:
    """sup over grid pairs in [a, b] of |z(t)-z(s)| / sqrt(|t-s| log(2(b-a)/|t-s|)).

    The normalizer is at least log 2 on grid pairs, so no singularity
    handling is needed; equal-time pairs are excluded by construction.
    """
    sel = _window_indices(path.grid, a, b)
    vals = _single_layer(path, layer)[sel]
    times = np.asarray(path.grid.times)[sel]
    return float(_kernels.sup_normalized_increment(vals, times, b - a))


def sup_modulus_samples(ensemble: PathEnsemble, a: float, b: float) -> np.ndarray:
    """Per-replica, per-layer sup statistics on [a, b], shape (R, L)."""
    sel = _window_indices(ensemble.grid, a, b)
    times = np.asarray(ensemble.grid.times)[sel]
    vals = ensemble.values[:, :, sel]
    out = np.empty(vals.shape[:2])
    for r in range(vals.shape[0]):
        for l in range(vals.shape[1]):
            out[r, l] = _kernels.sup_normalized_increment(vals[r, l], times, b - a)
    return out


def holder_norm(
    path: PathBundle, alpha: float, a: float, b: float, layer: Optional[int] = None
) -> float:
    """sup over grid pairs in [a, b] of |z(t)-z(s)| / |t-s|^alpha."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    sel = _window_indices(path.grid, a, b)
    vals = _single_layer(path, layer)[sel]
    times = np.asarray(path.grid.times)[sel]
    return float(_kernels.sup_holder_ratio(vals, times, alpha))


def holder_samples(ensemble: PathEnsemble, alpha: float, a: float, b: float) -> np.ndarray:
    """Per-replica, per-layer Holder norms on [a, b], shape (R, L)."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    sel = _window_indices(ensemble.grid, a, b)
    times = np.asarray(ensemble.grid.times)[sel]
    vals = ensemble.values[:, :, sel]
    out = np.empty(vals.shape[:2])
    for r in range(vals.shape[0]):
        for l in range(vals.shape[1]):
            out[r, l] = _kernels.sup_holder_ratio(vals[r, l], times, alpha)
    return out


def select_window_pairs(grid: TimeGrid, a: float, b: float, max_pairs: int = 12):
    """A deterministic spread of (s, t) grid pairs inside [a, b]: several
    lags from one grid step up to the full window, two anchors per lag."""
    sel = _window_indices(grid, a, b)
    times = np.asarray(grid.times)[sel]
    n = times.size
    lags = sorted({max(1, int(round(x))) for x in np.geomspace(1, n - 1, num=6)})
    pairs = []
    for lag in lags:
        starts = [0] if lag * 2 >= n else [0, (n - 1 - lag) // 2]
        for s0 in starts:
            pairs.append((float(times[s0]), float(times[s0 + lag])))
            if len(pairs) >= max_pairs:
                return pairs
    return pairs


def window_ensemble(ensemble: PathEnsemble, a: float, b: float, stride: int = 1) -> PathEnsemble:
    """Restriction of an ensemble to grid points in [a, b], optionally strided.

    Striding lets windows of different lengths be compared on geometrically
    similar grids (same point count, proportionally scaled spacing), so
    scaling-law ratios are not polluted by resolution effects.
    """
    sel = _window_indices(ensemble.grid, a, b)[::stride]
    if sel.size < 2:
        raise ValueError("strided window has fewer than two grid points")
    return PathEnsemble(
        TimeGrid(np.asarray(ensemble.grid.times)[sel]),
        ensemble.values[:, :, sel],
        layer_lo=ensemble.layer_lo,
    )


# ---------------------------------------------------------------------------
# Tail curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailCurve:
    """Empirical exceedance curve with a Gaussian-envelope fit.

    ``points`` holds (K, probability, binomial SE); the fit of
    log p = log c1 - c2 K^2 uses only thresholds with p >= 10/n_samples.
    """

    points: tuple
    c1: float
    c2: float
    n_samples: int

    def envelope(self, k: float, factor: float = 1.0) -> float:
        return factor * self.c1 * float(np.exp(-self.c2 * k * k))


def tail_curve(samples: np.ndarray, k_grid: Sequence[float]) -> TailCurve:
    """Exceedance probabilities with standard errors plus the envelope fit."""
    s = np.asarray(samples, dtype=float).ravel()
    n = s.size
    if n == 0:
        raise ValueError("samples must be nonempty")
    pts = []
    fit_k2 = []
    fit_logp = []
    for k in k_grid:
        p = float(np.mean(s > k))
        se = float(np.sqrt(p * (1.0 - p) / n))
        pts.append((float(k), p, se))
        if p >= 10.0 / n and p > 0.0:
            fit_k2.append(k * k)
            fit_logp.append(np.log(p))
    if len(fit_k2) >= 2:
        slope, intercept = np.polyfit(np.asarray(fit_k2), np.asarray(fit_logp), 1)
        c1 = float(np.exp(intercept))
        c2 = float(-slope)
    else:
        c1 = float("nan")
        c2 = float("nan")
    return TailCurve(tuple(pts), c1, c2, n)


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HolderEntry:
    """E||z||_alpha^p on a window, per layer."""

    layer: int
    alpha: float
    a: float
    b: float
    p: float
    mean: float
    std_error: float
    n_replicas: int


@dataclass(frozen=True)
class ModulusReport:
    """Tables of modulus statistics with their Brownian baselines.

    ``sup_samples`` maps a layer to its raw sup-statistic samples so tail
    analysis stays possible downstream; CSV rows carry one line per
    (statistic, layer, parameters) cell.
    """

    n_replicas: int
    seed: int
    moment_rows: tuple = ()
    holder_rows: tuple = ()
    sup_samples: Optional[dict] = None

    def csv_rows(self):
        rows = [
            (
                "statistic", "layer", "param_a", "param_b", "p",
                "value", "std_error", "baseline", "passed",
            )
        ]
        for m in self.moment_rows:
            rows.append(
                ("increment_moment", m.layer, m.t_lo, m.t_hi, m.p,
                 m.mean, m.std_error, m.bound, int(m.passed))
            )
        for h in self.holder_rows:
            rows.append(
                ("holder_moment", h.layer, h.a, h.b, h.p,
                 h.mean, h.std_error, "", "")
            )
        return rows

    def verdicts(self):
        out = []
        for m in self.moment_rows:
            out.append(
                {
                    "check": (
                        f"increment-moment bound p={m.p:g} layer={m.layer} "
                        f"pair=({m.t_lo:g},{m.t_hi:g})"
                    ),
                    "lhs": m.mean,
                    "rhs": m.bound,
                    "std_error": m.std_error,
                    "passed": bool(m.passed),
                }
            )
        return out

    def all_passed(self) -> bool:
        return all(m.passed for m in self.moment_rows)


def holder_moment_entries(
    ensemble: PathEnsemble, alpha: float, a: float, b: float, p: float, stride: int = 1
) -> list[HolderEntry]:
    """E||z||_alpha^p entries per layer over a (possibly strided) window."""
    win = window_ensemble(ensemble, a, b, stride)
    samples = holder_samples(win, alpha, a, b) ** p  # (R, L)
    r = samples.shape[0]
    out = []
    for idx in range(samples.shape[1]):
        out.append(
            HolderEntry(
                layer=ensemble.layer_lo + idx,
                alpha=alpha,
                a=a,
                b=b,
                p=p,
                mean=float(samples[:, idx].mean()),
                std_error=float(samples[:, idx].std(ddof=1) / np.sqrt(r)),
                n_replicas=r,
            )
        )
    return out
