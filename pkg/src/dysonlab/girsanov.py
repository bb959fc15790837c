"""Path reweighting machinery.

The law of the repulsive-particle SDE started inside the ordered cone is an
absolutely continuous tilt of the independent-Brownian law; the
Radon-Nikodym weight of a path z on [0, T] is

    (h(z(T)) / h(z(0))) * exp(-integral_0^T V(z(s)) ds),   h > 0 at the start,

with h the product of pairwise gaps to the beta/2 power (zero off the cone)
and V = beta(beta-2)/4 times the sum of inverse squared gaps (infinite off
the cone), and weight zero for any path that leaves the cone.  This module
evaluates that weight on discrete paths, hosts the catalog of convex
functions (including the smoothed barriers that approximate -log h and V),
evaluates convex path Hamiltonians of the form

    H(z) = sum_i f_i(z(t_i)) + integral_a^b F(t, z(t)) dt,

estimates bridge partition functions Z_H(x, y) = E_{x,y}[exp(-H)], and runs
self-normalized importance sampling of tilted path expectations from
Brownian proposals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    McEstimate,
    PathBundle,
    RngStream,
    TimeGrid,
    make_uniform_grid,
)

__all__ = [
    "GAP_FLOOR",
    "ConvexFn",
    "Quadratic",
    "Linear",
    "PowerSum",
    "ExpSum",
    "LogBarrier",
    "InvSquareGaps",
    "HingeGaps",
    "SoftExpGaps",
    "TabulatedConvex",
    "convex_fn_from_config",
    "midpoint_convexity_violations",
    "smoothed_neg_log",
    "smoothed_inv_square",
    "hinge_neg",
    "vandermonde_power",
    "log_vandermonde_power",
    "inverse_gap_energy",
    "girsanov_weight",
    "girsanov_log_weight_batch",
    "HamiltonianSpec",
    "BridgeSpec",
    "eval_hamiltonian",
    "sample_bridges",
    "estimate_partition_bridge",
    "partition_function_field",
    "WeightedEstimate",
    "DegenerateWeightsError",
    "weighted_expectation",
]

# Gaps below this are indistinguishable from a collision at 64-bit precision;
# a discrete path reaching one gets weight zero.
GAP_FLOOR = 1e-12


class DegenerateWeightsError(RuntimeError):
    """Importance-sampling weights collapsed (effective sample size too small)."""


# ---------------------------------------------------------------------------
# Smoothed scalar pieces (convex on all of R, tangent-line extensions)
# ---------------------------------------------------------------------------

def smoothed_neg_log(s, eps: float):
    """-log s for s >= eps, extended linearly (tangent at eps) below."""
    s = np.asarray(s, dtype=float)
    out = np.where(s >= eps, -np.log(np.maximum(s, eps)), -np.log(eps) - (s - eps) / eps)
    return out if out.ndim else float(out)


def smoothed_inv_square(s, eps: float):
    """s^-2 for s >= eps, extended linearly (tangent at eps) below."""
    s = np.asarray(s, dtype=float)
    out = np.where(
        s >= eps,
        1.0 / np.maximum(s, eps) ** 2,
        eps ** -2 - 2.0 * eps ** -3 * (s - eps),
    )
    return out if out.ndim else float(out)


def hinge_neg(s, eps: float):
    """0 for s >= 0, -s/eps below: the beta=2 barrier piece."""
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 0.0, 0.0, -s / eps)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Convex-function catalog
# ---------------------------------------------------------------------------

class ConvexFn:
    """A convex function on R^d, evaluated batchwise.

    ``batch`` maps an array of shape (..., d) to shape (...); ``__call__``
    evaluates a single point.  Every concrete entry is convex on all of R^d
    (midpoint convexity is screened in tests and at config load).
    """

    tag = "convex"

    def batch(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.batch(x[None, :])[0])

    def config(self) -> dict:
        raise NotImplementedError


def _pair_diffs(x: np.ndarray) -> np.ndarray:
    """All gaps x_i - x_j for i < j, shape (..., n_pairs)."""
    d = x.shape[-1]
    iu, ju = np.triu_indices(d, k=1)
    return x[..., iu] - x[..., ju]


def _adjacent_rev_diffs(x: np.ndarray) -> np.ndarray:
    """x_{i+1} - x_i for consecutive coordinates, shape (..., d-1)."""
    return x[..., 1:] - x[..., :-1]


@dataclass(frozen=True)
class Quadratic(ConvexFn):
    """c * |x|^2 with c >= 0."""

    c: float
    tag = "quadratic"

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("quadratic coefficient must be nonnegative for convexity")

    def batch(self, x):
        return self.c * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)

    def config(self):
        return {"tag": "quadratic", "c": self.c}


@dataclass(frozen=True)
class Linear(ConvexFn):
    """<a, x> + c (affine, hence convex)."""

    a: tuple
    c: float = 0.0
    tag = "linear"

    def batch(self, x):
        a = np.asarray(self.a, dtype=float)
        return np.asarray(x, dtype=float) @ a + self.c

    def config(self):
        return {"tag": "linear", "a": list(self.a), "c": self.c}


@dataclass(frozen=True)
class PowerSum(ConvexFn):
    """c * sum_i |x_i|^p with c >= 0 and p >= 1."""

    c: float
    p: float
    tag = "power_sum"

    def __post_init__(self):
        if self.c < 0 or self.p < 1:
            raise ValueError("need c >= 0 and p >= 1 for convexity")

    def batch(self, x):
        return self.c * np.sum(np.abs(np.asarray(x, dtype=float)) ** self.p, axis=-1)

    def config(self):
        return {"tag": "power_sum", "c": self.c, "p": self.p}


@dataclass(frozen=True)
class ExpSum(ConvexFn):
    """sum_i exp(c * x_i)."""

    c: float = 1.0
    tag = "exp_sum"

    def batch(self, x):
        return np.sum(np.exp(self.c * np.asarray(x, dtype=float)), axis=-1)

    def config(self):
        return {"tag": "exp_sum", "c": self.c}


@dataclass(frozen=True)
class LogBarrier(ConvexFn):
    """(beta/2) * sum_{i<j} smoothed_neg_log(x_i - x_j): the smoothed
    log-repulsion barrier (minus-log of the smoothed gap-product weight)."""

    beta: float
    eps: float
    tag = "log_barrier_eps"

    def __post_init__(self):
        if not (0 < self.eps < 1):
            raise ValueError("eps must lie in (0, 1)")

    def batch(self, x):
        g = _pair_diffs(np.asarray(x, dtype=float))
        return 0.5 * self.beta * np.sum(smoothed_neg_log(g, self.eps), axis=-1)

    def config(self):
        return {"tag": "log_barrier_eps", "beta": self.beta, "eps": self.eps}


@dataclass(frozen=True)
class InvSquareGaps(ConvexFn):
    """beta(beta-2)/4 * sum_{i<j} smoothed_inv_square(x_i - x_j), beta > 2."""

    beta: float
    eps: float
    tag = "inv_square_eps"

    def __post_init__(self):
        if self.beta <= 2:
            raise ValueError("inv_square_eps is the beta > 2 potential")
        if not (0 < self.eps < 1):
            raise ValueError("eps must lie in (0, 1)")

    def batch(self, x):
        g = _pair_diffs(np.asarray(x, dtype=float))
        coeff = self.beta * (self.beta - 2.0) / 4.0
        return coeff * np.sum(smoothed_inv_square(g, self.eps), axis=-1)

    def config(self):
        return {"tag": "inv_square_eps", "beta": self.beta, "eps": self.eps}


@dataclass(frozen=True)
class HingeGaps(ConvexFn):
    """sum_{i<j} hinge_neg(x_i - x_j): the beta = 2 smoothed potential."""

    eps: float
    tag = "hinge_eps"

    def __post_init__(self):
        if not (0 < self.eps < 1):
            raise ValueError("eps must lie in (0, 1)")

    def batch(self, x):
        g = _pair_diffs(np.asarray(x, dtype=float))
        return np.sum(hinge_neg(g, self.eps), axis=-1)

    def config(self):
        return {"tag": "hinge_eps", "eps": self.eps}


@dataclass(frozen=True)
class SoftExpGaps(ConvexFn):
    """sum_i exp(x_{i+1} - x_i): the soft non-crossing penalty."""

    tag = "soft_exp_gaps"

    def batch(self, x):
        d = _adjacent_rev_diffs(np.asarray(x, dtype=float))
        if d.shape[-1] == 0:
            return np.zeros(np.asarray(x).shape[:-1])
        return np.sum(np.exp(d), axis=-1)

    def config(self):
        return {"tag": "soft_exp_gaps"}


class TabulatedConvex(ConvexFn):
    """Piecewise-linear convex function from tabulated values on a grid,
    applied coordinate-wise and summed.

    The table is validated at load time by a second-difference scan; the
    extension beyond the table is linear with the end slopes, which keeps
    the function convex on all of R.
    """

    tag = "custom_grid"

    def __init__(self, xs, values):
        xs = np.asarray(xs, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.size < 3 or xs.shape != values.shape:
            raise ValueError("need matching 1-d tables with at least 3 points")
        if not np.all(np.diff(xs) > 0):
            raise ValueError("table abscissae must be strictly increasing")
        slopes = np.diff(values) / np.diff(xs)
        if np.any(np.diff(slopes) < -1e-12 * max(1.0, np.max(np.abs(values)))):
            raise ValueError("tabulated values are not convex")
        self.xs = xs
        self.values = values
        self._slope_lo = slopes[0]
        self._slope_hi = slopes[-1]

    def batch(self, x):
        x = np.asarray(x, dtype=float)
        inner = np.interp(x, self.xs, self.values)
        lo = self.values[0] + self._slope_lo * (x - self.xs[0])
        hi = self.values[-1] + self._slope_hi * (x - self.xs[-1])
        per_coord = np.where(x < self.xs[0], lo, np.where(x > self.xs[-1], hi, inner))
        return np.sum(per_coord, axis=-1)

    def config(self):
        return {"tag": "custom_grid", "xs": self.xs.tolist(), "values": self.values.tolist()}


_CATALOG = {
    "quadratic": lambda d: Quadratic(float(d["c"])),
    "linear": lambda d: Linear(tuple(float(v) for v in d["a"]), float(d.get("c", 0.0))),
    "power_sum": lambda d: PowerSum(float(d["c"]), float(d["p"])),
    "exp_sum": lambda d: ExpSum(float(d.get("c", 1.0))),
    "log_barrier_eps": lambda d: LogBarrier(float(d["beta"]), float(d["eps"])),
    "inv_square_eps": lambda d: InvSquareGaps(float(d["beta"]), float(d["eps"])),
    "hinge_eps": lambda d: HingeGaps(float(d["eps"])),
    "soft_exp_gaps": lambda d: SoftExpGaps(),
    "custom_grid": lambda d: TabulatedConvex(d["xs"], d["values"]),
}


def convex_fn_from_config(cfg: dict) -> ConvexFn:
    """Build a catalog entry from its declarative config block."""
    if "tag" not in cfg:
        raise ValueError("convex function config needs a 'tag'")
    tag = cfg["tag"]
    if tag not in _CATALOG:
        raise ValueError(f"unknown convex function tag {tag!r}")
    return _CATALOG[tag](cfg)


def midpoint_convexity_violations(
    fn: Callable[[np.ndarray], float],
    dim: int,
    rng: RngStream,
    n_triples: int = 1000,
    tol: float = 1e-12,
    scale: float = 1.0,
) -> int:
    """Count random midpoint-convexity failures f((x+y)/2) > (f(x)+f(y))/2 + tol."""
    gen = rng.generator()
    x = gen.standard_normal((n_triples, dim)) * scale
    y = gen.standard_normal((n_triples, dim)) * scale
    if isinstance(fn, ConvexFn):
        fx, fy, fm = fn.batch(x), fn.batch(y), fn.batch(0.5 * (x + y))
    else:
        fx = np.array([fn(v) for v in x])
        fy = np.array([fn(v) for v in y])
        fm = np.array([fn(v) for v in 0.5 * (x + y)])
    return int(np.sum(fm > 0.5 * (fx + fy) + tol))


# ---------------------------------------------------------------------------
# Exact weight functions on the ordered cone
# ---------------------------------------------------------------------------

def log_vandermonde_power(beta: float, x) -> float:
    """log of prod_{i<j} (x_i - x_j)^(beta/2); -inf off the ordered cone."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    g = _pair_diffs(x)
    if np.any(g <= 0):
        return -np.inf
    return float(0.5 * beta * np.sum(np.log(g)))


def vandermonde_power(beta: float, x) -> float:
    """prod_{i<j} |x_i - x_j|^(beta/2) on the ordered cone, else 0."""
    lw = log_vandermonde_power(beta, x)
    return float(np.exp(lw)) if np.isfinite(lw) else 0.0


def inverse_gap_energy(beta: float, x) -> float:
    """beta(beta-2)/4 * sum_{i<j} (x_i - x_j)^-2 on the cone, +inf off it."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    g = _pair_diffs(x)
    if np.any(g <= 0):
        return np.inf
    coeff = beta * (beta - 2.0) / 4.0
    return float(coeff * np.sum(1.0 / g ** 2))


def girsanov_log_weight_batch(values: np.ndarray, times: np.ndarray, beta: float) -> np.ndarray:
    """Log path weights for a batch of discrete paths, -inf for cone exits.

    ``values`` has shape (R, L, T).  Any path whose minimal gap at a recorded
    time falls below GAP_FLOOR is treated as collided (weight zero).  The
    time integral of the inverse-gap energy uses the trapezoid rule on the
    path grid.
    """
    v = np.asarray(values, dtype=float)
    r, layers, t = v.shape
    if layers < 2:
        return np.zeros(r)
    iu, ju = np.triu_indices(layers, k=1)
    gaps = v[:, iu, :] - v[:, ju, :]  # (R, n_pairs, T)
    alive = np.all(gaps > GAP_FLOOR, axis=(1, 2))
    logw = np.full(r, -np.inf)
    if not np.any(alive):
        return logw
    g = gaps[alive]
    half_beta = 0.5 * beta
    logh_end = half_beta * np.sum(np.log(g[:, :, -1]), axis=1)
    logh_0 = half_beta * np.sum(np.log(g[:, :, 0]), axis=1)
    coeff = beta * (beta - 2.0) / 4.0
    if coeff != 0.0:
        energy = coeff * np.sum(g ** -2, axis=1)  # (R', T)
        integral = np.trapezoid(energy, np.asarray(times), axis=1)
    else:
        integral = 0.0
    logw[alive] = logh_end - logh_0 - integral
    return logw


def girsanov_weight(beta: float, path: PathBundle) -> float:
    """Path weight for one discrete path on [0, t0].

    Zero when the path leaves the ordered cone (or any recorded gap is below
    GAP_FLOOR); raises when the start itself is on the cone boundary, where
    the weight is undefined.
    """
    z0 = path.values[:, 0]
    if path.n_layers >= 2 and log_vandermonde_power(beta, z0) == -np.inf:
        raise ValueError("start is on the chamber boundary: weight undefined")
    logw = girsanov_log_weight_batch(path.values[None, :, :], path.grid.times, beta)[0]
    return float(np.exp(logw)) if np.isfinite(logw) else 0.0


# ---------------------------------------------------------------------------
# Convex path Hamiltonians
# ---------------------------------------------------------------------------

class Integrand:
    """Time-indexed convex integrand F(t, x): convex in x for every fixed t."""

    def batch(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError


class TimeConstant(Integrand):
    """F(t, x) = f(x) for a catalog convex function f."""

    def __init__(self, fn: ConvexFn):
        self.fn = fn

    def batch(self, t, x):
        return self.fn.batch(x)

    def config(self):
        return {"kind": "time_constant", "fn": self.fn.config()}


class ScaledInTime(Integrand):
    """F(t, x) = w(t) * f(x) with w a nonnegative weight function of time."""

    def __init__(self, fn: ConvexFn, weight: Callable[[float], float]):
        self.fn = fn
        self.weight = weight

    def batch(self, t, x):
        w = float(self.weight(t))
        if w < 0:
            raise ValueError("time weight must stay nonnegative to preserve convexity")
        return w * self.fn.batch(x)

    def config(self):
        raise ValueError("ScaledInTime with a free-form weight has no config form")


def _as_integrand(obj) -> Optional[Integrand]:
    if obj is None or isinstance(obj, Integrand):
        return obj
    if isinstance(obj, ConvexFn):
        return TimeConstant(obj)
    raise TypeError("integrand must be a ConvexFn, an Integrand, or None")


@dataclass(frozen=True)
class HamiltonianSpec:
    """Convex path functional: point terms plus a time integral.

    ``quadrature`` is the panel count of the uniform grid used when the
    Hamiltonian defines a bridge sampling problem (partition function
    estimation); evaluation on an explicit path always integrates by the
    trapezoid rule on the path's own grid.
    """

    a: float
    b: float
    point_terms: tuple = ()
    integrand: object = None
    quadrature: int = 32

    def __post_init__(self):
        if not (self.a < self.b):
            raise ValueError("need a < b")
        if self.quadrature < 1:
            raise ValueError("quadrature panel count must be positive")
        terms = []
        for t, fn in self.point_terms:
            t = float(t)
            if not (self.a <= t <= self.b):
                raise ValueError(f"point-term time {t} outside [{self.a}, {self.b}]")
            if not isinstance(fn, ConvexFn):
                raise TypeError("point terms must use catalog convex functions")
            terms.append((t, fn))
        object.__setattr__(self, "point_terms", tuple(terms))
        object.__setattr__(self, "integrand", _as_integrand(self.integrand))

    def grid(self) -> TimeGrid:
        """The uniform quadrature grid a + (b-a) i/n, i = 0..n."""
        return make_uniform_grid(self.a, self.b, self.quadrature)

    def config(self) -> dict:
        if self.integrand is not None and not isinstance(self.integrand, TimeConstant):
            raise ValueError("only time-constant integrands have a config form")
        return {
            "interval": [self.a, self.b],
            "quadrature": self.quadrature,
            "point_terms": [{"time": t, "fn": fn.config()} for t, fn in self.point_terms],
            "integrand": None if self.integrand is None else self.integrand.fn.config(),
        }

    @staticmethod
    def from_config(cfg: dict) -> "HamiltonianSpec":
        a, b = (float(v) for v in cfg["interval"])
        terms = tuple(
            (float(pt["time"]), convex_fn_from_config(pt["fn"]))
            for pt in cfg.get("point_terms", [])
        )
        integrand_cfg = cfg.get("integrand")
        integrand = None if integrand_cfg is None else convex_fn_from_config(integrand_cfg)
        return HamiltonianSpec(
            a, b, terms, integrand, int(cfg.get("quadrature", 32))
        )


def _batch_hamiltonian(spec: HamiltonianSpec, values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """H evaluated on a batch of paths (R, L, T) over the grid ``times``."""
    grid = TimeGrid(times)
    ia = grid.index_of(spec.a)
    ib = grid.index_of(spec.b)
    total = np.zeros(values.shape[0])
    for t, fn in spec.point_terms:
        k = grid.index_of(t)
        total += fn.batch(values[:, :, k])
    if spec.integrand is not None:
        sub = times[ia : ib + 1]
        cols = np.empty((values.shape[0], sub.size))
        for idx, k in enumerate(range(ia, ib + 1)):
            cols[:, idx] = spec.integrand.batch(float(times[k]), values[:, :, k])
        total += np.trapezoid(cols, sub, axis=1)
    return total


def eval_hamiltonian(spec: HamiltonianSpec, path: PathBundle) -> float:
    """Point terms at their exact grid times plus the trapezoid time integral.

    The path grid must contain a, b and every point-term time; times off the
    grid raise (no interpolation: the caller refines the grid instead).
    """
    return float(_batch_hamiltonian(spec, path.values[None, :, :], np.asarray(path.grid.times))[0])


# ---------------------------------------------------------------------------
# Bridge sampling and partition functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BridgeSpec:
    """Entry/exit data for independent bridges on the Hamiltonian's interval.

    ``eta`` is an optional tabulated per-layer shift on the quadrature grid
    (shape layers x (n+1)), vanishing at both endpoints.
    """

    x: np.ndarray
    y: np.ndarray
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be vectors of equal length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.eta is not None:
            eta = np.asarray(self.eta, dtype=float)
            if eta.ndim != 2 or eta.shape[0] != x.size:
                raise ValueError("eta must be (layers x grid) on the quadrature grid")
            if np.any(eta[:, 0] != 0.0) or np.any(eta[:, -1] != 0.0):
                raise ValueError("eta must vanish at both endpoints")
            object.__setattr__(self, "eta", eta)

    @property
    def n_layers(self) -> int:
        return int(self.x.size)


def sample_bridges(
    times: np.ndarray, n_layers: int, n_replicas: int, gen: np.random.Generator
) -> np.ndarray:
    """Standard bridges pinned to 0 at both ends of ``times``, shape (R, L, T)."""
    t = np.asarray(times, dtype=float)
    dt = np.diff(t)
    steps = gen.standard_normal((n_replicas, n_layers, dt.size)) * np.sqrt(dt)
    w = np.concatenate(
        [np.zeros((n_replicas, n_layers, 1)), np.cumsum(steps, axis=2)], axis=2
    )
    frac = (t - t[0]) / (t[-1] - t[0])
    return w - frac * w[:, :, -1:]


def _bridge_paths(
    spec: HamiltonianSpec, bridge: BridgeSpec, n_replicas: int, gen: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    times = np.asarray(spec.grid().times)
    b = sample_bridges(times, bridge.n_layers, n_replicas, gen)
    frac = (times - times[0]) / (times[-1] - times[0])
    line = bridge.x[:, None] * (1.0 - frac)[None, :] + bridge.y[:, None] * frac[None, :]
    paths = b + line[None, :, :]
    if bridge.eta is not None:
        if bridge.eta.shape[1] != times.size:
            raise ValueError("eta is not tabulated on the quadrature grid")
        paths = paths + bridge.eta[None, :, :]
    return times, paths


def estimate_partition_bridge(
    spec: HamiltonianSpec,
    bridge: BridgeSpec,
    n_replicas: int,
    rng: RngStream,
    block: int = 8192,
) -> McEstimate:
    """Monte Carlo estimate of Z_H(x, y) = E_{x,y}[exp(-H(z))].

    Bridges are sampled layerwise on the quadrature grid, shifted by the
    affine interpolation of (x, y) and by eta, and exp(-H) is averaged.
    Replicas are drawn in fixed-size blocks with per-block child streams, so
    the estimate is reproducible independent of blocking.
    """
    if n_replicas < 2:
        raise ValueError("need at least two replicas")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_replicas:
        count = min(block, n_replicas - done)
        gen = rng.child("bridge-block", done).generator()
        times, paths = _bridge_paths(spec, bridge, count, gen)
        w = np.exp(-_batch_hamiltonian(spec, paths, times))
        total += float(w.sum())
        total_sq += float((w ** 2).sum())
        done += count
    mean = total / n_replicas
    var = max(0.0, (total_sq - n_replicas * mean ** 2) / (n_replicas - 1))
    return McEstimate(mean, float(np.sqrt(var / n_replicas)), n_replicas, rng.master_seed)


def partition_function_field(
    spec: HamiltonianSpec,
    x_values: np.ndarray,
    y_values: np.ndarray,
    n_replicas: int,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """log Z_H(x, y) and its standard error on a grid of single-layer endpoints.

    One common bridge batch is reused for every (x, y) node, so the error
    surface is smooth across the grid and differences between neighbouring
    nodes are far more accurate than independent sampling would give; the
    per-node marginal standard errors are still the honest i.i.d. ones.
    """
    xs = np.asarray(x_values, dtype=float)
    ys = np.asarray(y_values, dtype=float)
    gen = rng.child("field-bridges").generator()
    times = np.asarray(spec.grid().times)
    bridges = sample_bridges(times, 1, n_replicas, gen)  # (R, 1, T)
    frac = (times - times[0]) / (times[-1] - times[0])
    logz = np.empty((xs.size, ys.size))
    se_log = np.empty((xs.size, ys.size))
    for i, xv in enumerate(xs):
        for j, yv in enumerate(ys):
            line = xv * (1.0 - frac) + yv * frac
            paths = bridges + line[None, None, :]
            w = np.exp(-_batch_hamiltonian(spec, paths, times))
            m = float(w.mean())
            se = float(w.std(ddof=1) / np.sqrt(n_replicas))
            logz[i, j] = np.log(m)
            se_log[i, j] = se / m
    return logz, se_log


# ---------------------------------------------------------------------------
# Importance sampling of tilted path expectations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightedEstimate:
    """Self-normalized importance-sampling estimate with its ESS diagnostic."""

    mean: float
    std_error: float
    n_replicas: int
    seed: int
    ess: float

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return (self.mean - z * self.std_error, self.mean + z * self.std_error)


def weighted_expectation(
    beta: float,
    functional: Callable[[np.ndarray, np.ndarray], float],
    params,
    grid: TimeGrid,
    n_replicas: int,
    rng: RngStream,
    min_ess: float = 10.0,
    block: int = 4096,
) -> WeightedEstimate:
    """E[G(X)] under the interacting law via reweighted Brownian paths.

    ``functional`` maps (values (L, T), times) to a scalar.  Brownian paths
    start at params.x_start (which must be strictly ordered: the weight is
    undefined on the boundary) and are reweighted by the Girsanov path
    weight; the estimator is the self-normalized ratio, which cancels the
    grid-level constants of the discretized weight.  Raises
    DegenerateWeightsError when the effective sample size drops below
    ``min_ess`` instead of returning a silently noisy estimate.
    """
    x0 = np.asarray(params.x_start, dtype=float)
    if x0.size > 1 and not np.all(x0[:-1] > x0[1:]):
        raise ValueError("weighted_expectation needs a start strictly inside the chamber")
    times = np.asarray(grid.times)
    dt = np.diff(times)
    n_layers = x0.size

    logw_all = np.empty(n_replicas)
    g_all = np.empty(n_replicas)
    done = 0
    while done < n_replicas:
        count = min(block, n_replicas - done)
        gen = rng.child("brownian-block", done).generator()
        steps = gen.standard_normal((count, n_layers, dt.size)) * np.sqrt(dt)
        paths = np.concatenate(
            [np.zeros((count, n_layers, 1)), np.cumsum(steps, axis=2)], axis=2
        )
        paths += x0[None, :, None]
        logw_all[done : done + count] = girsanov_log_weight_batch(paths, times, beta)
        for r in range(count):
            g_all[done + r] = float(functional(paths[r], times))
        done += count

    finite = np.isfinite(logw_all)
    if not np.any(finite):
        raise DegenerateWeightsError("every proposal path left the ordered cone")
    shift = logw_all[finite].max()
    w = np.where(finite, np.exp(logw_all - shift), 0.0)
    wsum = w.sum()
    ess = float(wsum ** 2 / np.sum(w ** 2))
    if ess < min_ess:
        raise DegenerateWeightsError(f"effective sample size {ess:.2f} < {min_ess}")
    wn = w / wsum
    mean = float(np.sum(wn * g_all))
    se = float(np.sqrt(np.sum(wn ** 2 * (g_all - mean) ** 2)))
    return WeightedEstimate(mean, se, n_replicas, rng.master_seed, ess)
