"""Hot numeric kernels.

Every kernel here is written as a plain scalar-loop function and compiled
with numba's ``@njit`` when available.  Setting the environment variable
``DYSONLAB_NUMBA=0`` (before import) selects the pure-numpy/Python path
instead; the two paths execute the identical statements in the identical
order, so they consume random streams identically and produce bit-identical
results.  ``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("DYSONLAB_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _flag not in ("0", "false", "off", "no")

if NUMBA_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def _jit(fn):
        return numba.njit(cache=True)(fn)
else:
    def _jit(fn):
        return fn


def python_impl(kernel):
    """The uncompiled twin of a kernel (the kernel itself when jit is off)."""
    return getattr(kernel, "py_func", kernel)


# ---------------------------------------------------------------------------
# Interacting-particle SDE integrator
# ---------------------------------------------------------------------------

@_jit
def dbm_integrate(x0, times, beta, dt_base, dt_min, gap_safety, gen):
    """Euler-Maruyama with adaptive substepping for the repulsive-drift SDE.

    Drift on particle i is (beta/2) * sum_{j != i} 1/(x_i - x_j); unit
    diffusion per coordinate.  The local step is min(dt_base,
    gap_safety * g^2 / beta) for the current minimal gap g (never below
    dt_min): the drift magnitude scales like beta/g, so a step of order g^2
    keeps the drift displacement a bounded fraction of g.  A substep whose
    proposal breaks the strict ordering is halved and redrawn; at the dt_min
    floor a short retry budget absorbs isolated unlucky draws, after which
    the run aborts with status -1 (parameters too aggressive: a state that
    keeps rejecting at the floor cannot be resolved at this dt_min).

    Returns (values, status, n_substeps, n_rejections, min_gap_seen) where
    values is (n_particles x n_times) and status 0 means success.
    """
    n = x0.shape[0]
    m = times.shape[0]
    out = np.empty((n, m))
    x = x0.copy()
    prop = np.empty(n)
    drift = np.empty(n)
    for i in range(n):
        out[i, 0] = x[i]

    n_sub = 0
    n_rej = 0
    min_gap = np.inf
    for i in range(n - 1):
        g = x[i] - x[i + 1]
        if g < min_gap:
            min_gap = g

    for k in range(m - 1):
        t = times[k]
        t_end = times[k + 1]
        while t < t_end:
            g = np.inf
            for i in range(n - 1):
                d = x[i] - x[i + 1]
                if d < g:
                    g = d
            dt = dt_base
            if n > 1:
                lim = gap_safety * g * g / beta
                if lim < dt:
                    dt = lim
                if dt < dt_min:
                    dt = dt_min
            last = dt >= t_end - t
            if last:
                dt = t_end - t

            for i in range(n):
                s = 0.0
                for j in range(n):
                    if j != i:
                        s += 1.0 / (x[i] - x[j])
                drift[i] = 0.5 * beta * s

            floor_rejects = 0
            while True:
                ok = True
                sq = np.sqrt(dt)
                for i in range(n):
                    prop[i] = x[i] + drift[i] * dt + sq * gen.standard_normal()
                for i in range(n - 1):
                    if prop[i] <= prop[i + 1]:
                        ok = False
                        break
                n_sub += 1
                if ok:
                    break
                n_rej += 1
                if dt <= dt_min:
                    floor_rejects += 1
                    if floor_rejects >= 8:
                        return out, -1, n_sub, n_rej, min_gap
                else:
                    dt = dt / 2.0
                    if dt < dt_min:
                        dt = dt_min
                    last = False

            for i in range(n):
                x[i] = prop[i]
            for i in range(n - 1):
                d = x[i] - x[i + 1]
                if d < min_gap:
                    min_gap = d
            if last:
                t = t_end
            else:
                t = t + dt

        for i in range(n):
            out[i, k + 1] = x[i]

    return out, 0, n_sub, n_rej, min_gap


@_jit
def pairwise_drift(x, beta):
    """Drift vector (beta/2) * sum_{j != i} 1/(x_i - x_j)."""
    n = x.shape[0]
    drift = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            if j != i:
                s += 1.0 / (x[i] - x[j])
        drift[i] = 0.5 * beta * s
    return drift


# ---------------------------------------------------------------------------
# Pairwise path statistics (sup over grid pairs)
# ---------------------------------------------------------------------------

@_jit
def sup_normalized_increment(values, times, span):
    """sup over grid pairs of |z(t)-z(s)| / sqrt(|t-s| log(2*span/|t-s|)).

    ``span`` is the window width b-a, so the log factor is >= log 2 > 0 for
    every pair inside the window.
    """
    m = times.shape[0]
    best = 0.0
    for i in range(m - 1):
        for j in range(i + 1, m):
            dt = times[j] - times[i]
            dz = values[j] - values[i]
            if dz < 0.0:
                dz = -dz
            r = dz / np.sqrt(dt * np.log(2.0 * span / dt))
            if r > best:
                best = r
    return best


@_jit
def sup_holder_ratio(values, times, alpha):
    """sup over grid pairs of |z(t)-z(s)| / |t-s|^alpha."""
    m = times.shape[0]
    best = 0.0
    for i in range(m - 1):
        for j in range(i + 1, m):
            dt = times[j] - times[i]
            dz = values[j] - values[i]
            if dz < 0.0:
                dz = -dz
            r = dz / dt ** alpha
            if r > best:
                best = r
    return best


# ---------------------------------------------------------------------------
# Semi-discrete polymer partition function (log-sum-exp dynamic program)
# ---------------------------------------------------------------------------

@_jit
def polymer_top_line(levels, dt):
    """log of the iterated-trapezoid polymer partition function, per grid time.

    ``levels`` is (n_levels x (m+1)): level j's path value at each grid time.
    Level 1 contributes e^{levels[0, i]}; each further level j is folded in by
    a trapezoid quadrature over the jump time,

        Z_j(t_i) = integral_0^{t_i} Z_{j-1}(s) e^{B_j(t_i) - B_j(s)} ds,

    evaluated on the grid.  All mass accumulation runs in log space via a
    streaming log-sum-exp, since Z overflows doubles at moderate horizons.
    Returns log Z_{n_levels}(t_i) for every i (entries before the first
    possible arrival of the top path are -inf).
    """
    n = levels.shape[0]
    m1 = levels.shape[1]
    logz = np.empty(m1)
    for i in range(m1):
        logz[i] = levels[0, i]
    if n == 1:
        return logz

    log_dt = np.log(dt)
    log_half = np.log(0.5)
    nxt = np.empty(m1)
    for j in range(1, n):
        b = levels[j]
        # acc = log of sum_{k < i} w_k Z_{j-1}(t_k) e^{-B_j(t_k)}, w_0 = 1/2
        acc = -np.inf
        nxt[0] = -np.inf
        for i in range(1, m1):
            k = i - 1
            term = logz[k] - b[k]
            if k == 0:
                term += log_half
            acc = np.logaddexp(acc, term)
            # endpoint k = i enters with trapezoid weight 1/2
            tot = np.logaddexp(acc, log_half + logz[i] - b[i])
            nxt[i] = log_dt + b[i] + tot
        for i in range(m1):
            logz[i] = nxt[i]
    return logz


# ---------------------------------------------------------------------------
# Entropic optimal transport (log-domain Sinkhorn, on-the-fly cost)
# ---------------------------------------------------------------------------

@_jit
def sinkhorn_potentials(cost, eps, n_iter, tol):
    """Log-domain alternating scaling for entropic OT with uniform weights.

    ``cost`` is the dense (n x m) cost matrix, held by the caller (so the
    caller controls the memory/time trade-off).  Returns
    (f, g, marginal_err, iterations): after each f-update the row marginals
    of the plan are exact, so convergence is measured as the L1 error of the
    column marginals; iteration stops once that error reaches ``tol``.
    """
    n = cost.shape[0]
    m = cost.shape[1]
    f = np.zeros(n)
    g = np.zeros(m)
    log_a = -np.log(n)
    log_b = -np.log(m)
    err = np.inf
    it = 0
    while it < n_iter:
        # f_i = -eps * LSE_j[(g_j - C_ij)/eps + log b_j]
        for i in range(n):
            best = -np.inf
            for j in range(m):
                v = (g[j] - cost[i, j]) / eps
                if v > best:
                    best = v
            s = 0.0
            for j in range(m):
                s += np.exp((g[j] - cost[i, j]) / eps - best)
            f[i] = -eps * (best + log_b + np.log(s))
        # column marginals of the plan P_ij = exp((f_i + g_j - C_ij)/eps) a_i b_j
        err = 0.0
        bmass = np.exp(log_b)
        for j in range(m):
            col = 0.0
            for i in range(n):
                col += np.exp((f[i] + g[j] - cost[i, j]) / eps + log_a + log_b)
            e = col - bmass
            if e < 0.0:
                e = -e
            err += e
        it += 1
        if err <= tol:
            break
        # g_j = -eps * LSE_i[(f_i - C_ij)/eps + log a_i]
        for j in range(m):
            best = -np.inf
            for i in range(n):
                v = (f[i] - cost[i, j]) / eps
                if v > best:
                    best = v
            s = 0.0
            for i in range(n):
                s += np.exp((f[i] - cost[i, j]) / eps - best)
            g[j] = -eps * (best + log_a + np.log(s))
    return f, g, err, it


@_jit
def sinkhorn_barycentric(cost, ys, g, eps):
    """Barycentric projection of the entropic plan: row-softmax average of ys."""
    n = cost.shape[0]
    m = ys.shape[0]
    d = ys.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        best = -np.inf
        for j in range(m):
            v = (g[j] - cost[i, j]) / eps
            if v > best:
                best = v
        tot = 0.0
        for j in range(m):
            w = np.exp((g[j] - cost[i, j]) / eps - best)
            tot += w
            for k in range(d):
                out[i, k] += w * ys[j, k]
        for k in range(d):
            out[i, k] /= tot
    return out


KERNELS = {
    "dbm_integrate": dbm_integrate,
    "pairwise_drift": pairwise_drift,
    "sup_normalized_increment": sup_normalized_increment,
    "sup_holder_ratio": sup_holder_ratio,
    "polymer_top_line": polymer_top_line,
    "sinkhorn_potentials": sinkhorn_potentials,
    "sinkhorn_barycentric": sinkhorn_barycentric,
}
