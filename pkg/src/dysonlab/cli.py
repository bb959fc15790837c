"""Batch experiment runner: declarative JSON configs in, deterministic
statistics and pass/fail reports out.

Every run writes, into the output directory: one CSV per statistic table
(full 17-significant-digit rendering, so downstream re-parsing is lossless),
a ``summary.json`` listing every inequality tested with both sides, standard
errors and a boolean verdict, and a ``manifest.json`` with the seed, the
config hash and package versions.  Outputs are byte-identical for a fixed
(config, seed) regardless of worker count: work partitioning is seed-indexed,
not scheduler-indexed.

Exit codes: 0 all verdicts pass, 2 verdict failure, 3 config error,
4 integrator failure, 5 resource failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from . import __version__
from .core import (
    DysonParams,
    PathEnsemble,
    RngStream,
    make_uniform_grid,
    stream_id_for,
)
from .dyson_sde import (
    IntegratorError,
    estimate_mean_curves,
    sample_oracle_ensemble,
    simulate_ensemble,
)
from .girsanov import (
    HamiltonianSpec,
    Quadratic,
    convex_fn_from_config,
    partition_function_field,
    sample_bridges,
    weighted_expectation,
)
from .oy_polymer import PolymerParams, oy_modulus_suite
from .scaling_stats import (
    ModulusReport,
    center_ensemble,
    edge_scale_marginal,
    holder_moment_entries,
    increment_moment,
    select_window_pairs,
    sup_modulus_samples,
    tail_curve,
)
from .transport import (
    TiltedGaussian1D,
    brenier_map_1d,
    contraction_check,
    harge_check,
    logconcavity_scan,
    sinkhorn_map_2d,
)

__all__ = [
    "ConfigError",
    "ExperimentResult",
    "SCHEMA_VERSION",
    "load_config",
    "validate_config",
    "run_experiment",
    "main",
]

SCHEMA_VERSION = 1

EXIT_PASS = 0
EXIT_VERDICT_FAILURE = 2
EXIT_CONFIG_ERROR = 3
EXIT_INTEGRATOR_FAILURE = 4
EXIT_RESOURCE_FAILURE = 5


class ConfigError(ValueError):
    """The config does not validate against the schema."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

_REQUIRED = object()


def _as_int(v, name):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    return v


def _as_float(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    return float(v)


def _as_bool(v, name):
    if not isinstance(v, bool):
        raise ConfigError(f"{name} must be a boolean, got {v!r}")
    return v


def _as_str(v, name):
    if not isinstance(v, str):
        raise ConfigError(f"{name} must be a string, got {v!r}")
    return v


def _as_float_list(v, name):
    if not isinstance(v, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        raise ConfigError(f"{name} must be a list of numbers, got {v!r}")
    return [float(x) for x in v]


def _as_pair_list(v, name):
    if not isinstance(v, list):
        raise ConfigError(f"{name} must be a list of [s, t] pairs")
    out = []
    for item in v:
        p = _as_float_list(item, name + " entry")
        if len(p) != 2:
            raise ConfigError(f"{name} entries must be pairs")
        out.append(p)
    return out


def _as_dict(v, name):
    if not isinstance(v, dict):
        raise ConfigError(f"{name} must be an object, got {v!r}")
    return v


# Each kind-specific parameter: name -> (converter, default).  Defaults are
# part of the schema; _REQUIRED marks mandatory keys.  Unknown keys are
# errors, not warnings: a silent typo in beta or eps would corrupt an
# experiment.

_SDE_COMMON = {
    "beta": (_as_float, _REQUIRED),
    "n_particles": (_as_int, _REQUIRED),
    "x_start": (_as_float_list, None),  # None means the origin
    "dt_base": (_as_float, 1e-3),
    "dt_min": (_as_float, 1e-12),
    "gap_safety": (_as_float, 0.05),
}

KIND_SCHEMAS = {
    "dbm-simulate": {
        **_SDE_COMMON,
        "horizon": (_as_float, 1.0),
        "n_steps": (_as_int, 20),
        "n_replicas": (_as_int, _REQUIRED),
    },
    "oracle-compare": {
        **_SDE_COMMON,
        "t": (_as_float, 1.0),
        "n_steps": (_as_int, 8),
        "n_replicas": (_as_int, _REQUIRED),
        "ks_threshold": (_as_float, 0.01),
    },
    "moment-check": {
        **_SDE_COMMON,
        "horizon": (_as_float, 1.0),
        "n_steps": (_as_int, 20),
        "n_replicas": (_as_int, _REQUIRED),
        "n_center_replicas": (_as_int, None),
        "p_values": (_as_float_list, [1.0, 2.0, 4.0]),
        "pairs": (_as_pair_list, None),
        "max_pairs": (_as_int, 20),
    },
    "tail-check": {
        **_SDE_COMMON,
        "horizon": (_as_float, 1.0),
        "n_steps": (_as_int, 64),
        "n_replicas": (_as_int, _REQUIRED),
        "n_center_replicas": (_as_int, None),
        "n_reference": (_as_int, 20000),
        "k_fit": (_as_float_list, [1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2, 2.4]),
        "k_check": (_as_float_list, [1.0, 1.5, 2.0, 2.5]),
        "envelope_factor": (_as_float, 2.0),
    },
    "holder-check": {
        **_SDE_COMMON,
        "horizon": (_as_float, 4.0),
        "n_steps": (_as_int, 128),
        "n_replicas": (_as_int, _REQUIRED),
        "n_center_replicas": (_as_int, None),
        "alpha": (_as_float, 0.25),
        "p": (_as_float, 2.0),
        "window_short": (_as_float_list, [0.0, 1.0]),
        "window_long": (_as_float_list, [0.0, 4.0]),
        "stride_long": (_as_int, 4),
        "ratio_tol": (_as_float, 0.30),
    },
    "girsanov-check": {
        **_SDE_COMMON,
        "horizon": (_as_float, 0.25),
        "n_steps": (_as_int, 250),
        "n_replicas": (_as_int, _REQUIRED),
        "min_ess": (_as_float, 1000.0),
        "functional": (_as_str, "tanh-gap-at-end"),
    },
    "edge-scale": {
        "beta": (_as_float, 2.0),
        "n_small": (_as_int, 50),
        "n_large": (_as_int, 100),
        "t_scaled": (_as_float, 0.0),
        "n_samples": (_as_int, _REQUIRED),
        "ks_threshold": (_as_float, 0.05),
    },
    "transport-check": {
        "tilts": (lambda v, n: v, None),
        "n_replicas": (_as_int, 40000),
        "contraction_tol": (_as_float, 1e-4),
        "gaussian_case_tol": (_as_float, 1e-3),
        "bridge_enabled": (_as_bool, True),
        "bridge_t1": (_as_float, 0.25),
        "bridge_t2": (_as_float, 0.75),
        "bridge_quadrature": (_as_int, 32),
        "bridge_replicas": (_as_int, 40000),
        "sinkhorn_enabled": (_as_bool, True),
        "sinkhorn_samples": (_as_int, 2000),
        "sinkhorn_epsilon": (_as_float, 0.05),
        "sinkhorn_iters": (_as_int, 20000),
        "sinkhorn_band": (_as_float, 0.05),
    },
    "logconcavity-check": {
        "hamiltonian": (_as_dict, None),
        "grid_lo": (_as_float, -1.0),
        "grid_hi": (_as_float, 1.0),
        "grid_n": (_as_int, 11),
        "n_replicas": (_as_int, 10000),
        "tol_factor": (_as_float, 3.0),
        "negative_control": (_as_bool, True),
    },
    "oy-suite": {
        "n_levels": (_as_int, 2),
        "drift": (_as_float_list, None),
        "t_max": (_as_float, 2.0),
        "m_steps": (_as_int, 200),
        "n_replicas": (_as_int, _REQUIRED),
        "alpha": (_as_float, 0.25),
        "window": (_as_float_list, [1.0, 2.0]),
        "p_values": (_as_float_list, [1.0, 2.0]),
    },
}

_TOP_KEYS = {"schema_version", "kind", "master_seed", "n_workers", "out_dir", "params"}


def validate_config(cfg: dict) -> dict:
    """Validate against the schema and return a normalized copy with every
    default filled in; unknown keys anywhere are errors."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("schema_version", "kind", "master_seed"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {cfg['schema_version']!r} is not supported (expected {SCHEMA_VERSION})"
        )
    kind = _as_str(cfg["kind"], "kind")
    if kind not in KIND_SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    seed = _as_int(cfg["master_seed"], "master_seed")
    if seed < 0:
        raise ConfigError("master_seed must be a nonnegative 64-bit integer")
    workers = _as_int(cfg.get("n_workers", 1), "n_workers")
    if workers < 1:
        raise ConfigError("n_workers must be >= 1")

    schema = KIND_SCHEMAS[kind]
    raw = _as_dict(cfg.get("params", {}), "params")
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys in params: {sorted(unknown)}")
    params = {}
    for name, (conv, default) in schema.items():
        if name in raw:
            params[name] = conv(raw[name], f"params.{name}")
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key params.{name!r}")
        else:
            params[name] = default

    _domain_checks(kind, params)
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "master_seed": seed,
        "n_workers": workers,
        "params": params,
    }
    if "out_dir" in cfg:
        out["out_dir"] = _as_str(cfg["out_dir"], "out_dir")
    return out


def _domain_checks(kind: str, p: dict) -> None:
    if "beta" in p and p["beta"] < 2.0:
        raise ConfigError(f"beta must be >= 2, got {p['beta']}")
    for name in ("n_replicas", "n_samples", "n_steps", "m_steps", "n_reference"):
        if name in p and p[name] is not None and p[name] < 1:
            raise ConfigError(f"params.{name} must be positive")
    if "tilts" in p and p["tilts"] is not None:
        if not isinstance(p["tilts"], list):
            raise ConfigError("params.tilts must be a list of convex-function configs")
        for t in p["tilts"]:
            try:
                convex_fn_from_config(_as_dict(t, "tilt"))
            except ValueError as e:
                raise ConfigError(f"bad tilt config: {e}") from e
    if "hamiltonian" in p and p["hamiltonian"] is not None:
        try:
            HamiltonianSpec.from_config(p["hamiltonian"])
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad hamiltonian config: {e}") from e


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e


# ---------------------------------------------------------------------------
# Output writers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, rows) -> None:
    lines = [",".join(_fmt(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _verdict(check: str, lhs: float, rhs: float, std_error, passed: bool) -> dict:
    return {
        "check": check,
        "lhs": float(lhs),
        "rhs": float(rhs),
        "std_error": None if std_error is None else float(std_error),
        "passed": bool(passed),
    }


def _moment_verdicts(rows) -> list:
    out = []
    for m in rows:
        out.append(
            _verdict(
                f"increment-moment bound p={m.p:g} layer={m.layer} pair=({m.t_lo:g},{m.t_hi:g})",
                m.mean,
                m.bound,
                m.std_error,
                m.passed,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Stat helpers
# ---------------------------------------------------------------------------

def _variance_with_se(samples: np.ndarray) -> tuple[float, float]:
    """Sample variance and the standard error of that variance estimate."""
    s = np.asarray(samples, dtype=float)
    n = s.size
    v = float(s.var(ddof=1))
    m4 = float(np.mean((s - s.mean()) ** 4))
    se = float(np.sqrt(max(0.0, m4 - (n - 3) / (n - 1) * v * v) / n))
    return v, se


def _mean_with_se(samples: np.ndarray) -> tuple[float, float]:
    s = np.asarray(samples, dtype=float)
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(s.size))


def _dyson_params(p: dict, horizon: float) -> DysonParams:
    x_start = p["x_start"]
    if x_start is None:
        x_start = [0.0] * p["n_particles"]
    return DysonParams(
        beta=p["beta"],
        n_particles=p["n_particles"],
        x_start=np.asarray(x_start, dtype=float),
        horizon=horizon,
        dt_base=p["dt_base"],
        dt_min=p["dt_min"],
        gap_safety=p["gap_safety"],
    )


def _deciles(samples: np.ndarray) -> list:
    qs = np.linspace(0.1, 0.9, 9)
    return [float(v) for v in np.quantile(samples, qs)]


# ---------------------------------------------------------------------------
# Experiment handlers: each returns (tables, verdicts)
# ---------------------------------------------------------------------------

def _run_dbm_simulate(p, seed, workers):
    params = _dyson_params(p, p["horizon"])
    grid = make_uniform_grid(0.0, p["horizon"], p["n_steps"])
    rng = RngStream(seed, stream_id_for("dbm-simulate", 0))
    ens, report = simulate_ensemble(params, grid, p["n_replicas"], rng.child("paths"), workers)

    n = params.n_particles
    t = params.horizon
    final = ens.values[:, :, -1]
    sums = final.sum(axis=1)
    var_sum, var_se = _variance_with_se(sums)
    sum_sq, sum_sq_se = _mean_with_se((final ** 2).sum(axis=1))
    mean_sum, mean_sum_se = _mean_with_se(sums)

    start_sum = float(np.sum(params.x_start))
    start_sq = float(np.sum(params.x_start ** 2))
    ito_second = start_sq + (n + params.beta * n * (n - 1) / 2.0) * t

    verdicts = [
        _verdict(
            f"sum-variance identity Var(sum X)(T)=N*T at T={t:g}",
            var_sum, n * t, var_se, abs(var_sum - n * t) <= 3 * var_se,
        ),
        _verdict(
            f"second-moment identity E[sum X^2](T) at T={t:g}",
            sum_sq, ito_second, sum_sq_se, abs(sum_sq - ito_second) <= 3 * sum_sq_se,
        ),
        _verdict(
            "sum-mean conservation E[sum X](T) = sum x_start",
            mean_sum, start_sum, mean_sum_se, abs(mean_sum - start_sum) <= 3 * mean_sum_se,
        ),
    ]

    means = ens.values.mean(axis=0)
    ses = ens.values.std(axis=0, ddof=1) / np.sqrt(ens.n_replicas)
    curve_rows = [("layer", "time", "mean", "std_error")]
    for j in range(n):
        for k, tk in enumerate(grid.times):
            curve_rows.append((j + 1, float(tk), float(means[j, k]), float(ses[j, k])))
    integ_rows = [
        ("n_substeps_total", "min_gap_seen", "dt_rejections"),
        (report.n_substeps_total, report.min_gap_seen, report.dt_rejections),
    ]
    return {"mean_curves": curve_rows, "integrator": integ_rows}, verdicts


def _run_oracle_compare(p, seed, workers):
    params = _dyson_params(p, p["t"])
    grid = make_uniform_grid(0.0, p["t"], p["n_steps"])
    rng = RngStream(seed, stream_id_for("oracle-compare", 0))
    ens, _ = simulate_ensemble(params, grid, p["n_replicas"], rng.child("sde"), workers)
    sde_final = ens.values[:, :, -1]
    oracle = sample_oracle_ensemble(
        params.beta, params.n_particles, p["t"], p["n_replicas"], rng.child("oracle"), workers
    )

    rows = [("layer", "ks_distance", "threshold", "passed")]
    verdicts = []
    for j in range(params.n_particles):
        ks = float(ks_2samp(sde_final[:, j], oracle[:, j]).statistic)
        ok = ks < p["ks_threshold"]
        rows.append((j + 1, ks, p["ks_threshold"], int(ok)))
        verdicts.append(
            _verdict(f"oracle-vs-sde KS layer={j + 1} at t={p['t']:g}", ks, p["ks_threshold"], None, ok)
        )
    dec_rows = [("source", "layer", *[f"q{k}" for k in range(10, 100, 10)])]
    for j in range(params.n_particles):
        dec_rows.append(("sde", j + 1, *_deciles(sde_final[:, j])))
        dec_rows.append(("oracle", j + 1, *_deciles(oracle[:, j])))
    return {"ks": rows, "deciles": dec_rows}, verdicts


def _centered_ensemble(p, params, grid, rng, workers, n_replicas, n_center):
    ens, _ = simulate_ensemble(params, grid, n_replicas, rng.child("main"), workers)
    curves = estimate_mean_curves(params, grid, n_center, rng.child("center"), workers)
    return center_ensemble(ens, curves.means)


def _run_moment_check(p, seed, workers):
    params = _dyson_params(p, p["horizon"])
    grid = make_uniform_grid(0.0, p["horizon"], p["n_steps"])
    rng = RngStream(seed, stream_id_for("moment-check", 0))
    n_center = p["n_center_replicas"] or p["n_replicas"]
    centered = _centered_ensemble(p, params, grid, rng, workers, p["n_replicas"], n_center)

    pairs = p["pairs"]
    if pairs is None:
        pairs = select_window_pairs(grid, 0.0, p["horizon"], max_pairs=p["max_pairs"])
    rows = []
    for pv in p["p_values"]:
        rows.extend(increment_moment(centered, pv, [tuple(x) for x in pairs]))
    report = ModulusReport(
        n_replicas=p["n_replicas"], seed=seed, moment_rows=tuple(rows)
    )
    return {"moments": report.csv_rows()}, _moment_verdicts(rows)


def _run_tail_check(p, seed, workers):
    params = _dyson_params(p, p["horizon"])
    grid = make_uniform_grid(0.0, p["horizon"], p["n_steps"])
    rng = RngStream(seed, stream_id_for("tail-check", 0))

    # Brownian reference on the same grid: the envelope is fitted on the
    # reference tail, then the interacting ensemble must sit below
    # factor * envelope at the checkpoints.
    gen = rng.child("reference").generator()
    dt = np.diff(np.asarray(grid.times))
    steps = gen.standard_normal((p["n_reference"], 1, dt.size)) * np.sqrt(dt)
    ref_paths = np.concatenate(
        [np.zeros((p["n_reference"], 1, 1)), np.cumsum(steps, axis=2)], axis=2
    )
    ref_ens = PathEnsemble(grid, ref_paths)
    ref_sup = sup_modulus_samples(ref_ens, 0.0, p["horizon"])[:, 0]
    curve = tail_curve(ref_sup, p["k_fit"])

    verdicts = [
        _verdict(
            "reference tail envelope fit: decay rate positive",
            curve.c2, 0.0, None, bool(np.isfinite(curve.c2) and curve.c2 > 0),
        )
    ]

    n_center = p["n_center_replicas"] or p["n_replicas"]
    centered = _centered_ensemble(p, params, grid, rng, workers, p["n_replicas"], n_center)
    sup = sup_modulus_samples(centered, 0.0, p["horizon"])  # (R, L)

    rows = [("layer", "k", "probability", "std_error", "envelope", "passed")]
    for k, prob, se in curve.points:
        rows.append((0, k, prob, se, curve.envelope(k), ""))
    n = sup.shape[0]
    for j in range(sup.shape[1]):
        for k in p["k_check"]:
            prob = float(np.mean(sup[:, j] > k))
            se = float(np.sqrt(prob * (1 - prob) / n))
            env = curve.envelope(k, factor=p["envelope_factor"])
            ok = prob <= env + 3 * se
            rows.append((j + 1, k, prob, se, env, int(ok)))
            verdicts.append(
                _verdict(
                    f"tail envelope layer={j + 1} K={k:g}: P(sup > K) below "
                    f"{p['envelope_factor']:g} x fitted gaussian envelope",
                    prob, env, se, ok,
                )
            )
    return {"tails": rows}, verdicts


def _run_holder_check(p, seed, workers):
    params = _dyson_params(p, p["horizon"])
    grid = make_uniform_grid(0.0, p["horizon"], p["n_steps"])
    rng = RngStream(seed, stream_id_for("holder-check", 0))
    n_center = p["n_center_replicas"] or p["n_replicas"]
    centered = _centered_ensemble(p, params, grid, rng, workers, p["n_replicas"], n_center)

    a_s, b_s = p["window_short"]
    a_l, b_l = p["window_long"]
    short = holder_moment_entries(centered, p["alpha"], a_s, b_s, p["p"], stride=1)
    long_ = holder_moment_entries(centered, p["alpha"], a_l, b_l, p["p"], stride=p["stride_long"])
    target = ((b_l - a_l) / (b_s - a_s)) ** (p["p"] / 2.0 - p["alpha"] * p["p"])

    rows = [("layer", "alpha", "a", "b", "p", "value", "std_error")]
    for h in short + long_:
        rows.append((h.layer, h.alpha, h.a, h.b, h.p, h.mean, h.std_error))
    verdicts = []
    ratio_rows = [("layer", "ratio", "target", "rel_tol", "passed")]
    for hs, hl in zip(short, long_):
        ratio = hl.mean / hs.mean
        ok = abs(ratio - target) <= p["ratio_tol"] * target
        ratio_rows.append((hs.layer, ratio, target, p["ratio_tol"], int(ok)))
        verdicts.append(
            _verdict(
                f"holder-scaling ratio layer={hs.layer} alpha={p['alpha']:g} p={p['p']:g} "
                f"windows {b_l - a_l:g}/{b_s - a_s:g}",
                ratio, target, p["ratio_tol"] * target, ok,
            )
        )
    return {"holder": rows, "holder_ratio": ratio_rows}, verdicts


def _functional_tanh_gap(values, times):
    return float(np.tanh(values[0, -1] - values[-1, -1]))


def _functional_top_end(values, times):
    return float(values[0, -1])


FUNCTIONALS = {
    "tanh-gap-at-end": _functional_tanh_gap,
    "top-at-end": _functional_top_end,
}


def _run_girsanov_check(p, seed, workers):
    if p["functional"] not in FUNCTIONALS:
        raise ConfigError(f"unknown functional {p['functional']!r}")
    fn = FUNCTIONALS[p["functional"]]
    params = _dyson_params(p, p["horizon"])
    grid = make_uniform_grid(0.0, p["horizon"], p["n_steps"])
    rng = RngStream(seed, stream_id_for("girsanov-check", 0))

    weighted = weighted_expectation(
        params.beta, fn, params, grid, p["n_replicas"], rng.child("weighted")
    )
    ens, _ = simulate_ensemble(params, grid, p["n_replicas"], rng.child("direct"), workers)
    g_direct = np.array([fn(ens.values[r], np.asarray(grid.times)) for r in range(ens.n_replicas)])
    direct_mean, direct_se = _mean_with_se(g_direct)

    lo_w, hi_w = weighted.interval()
    lo_d, hi_d = direct_mean - 1.96 * direct_se, direct_mean + 1.96 * direct_se
    overlap = (lo_w <= hi_d) and (lo_d <= hi_w)

    rows = [
        ("estimator", "mean", "std_error", "ess"),
        ("weighted-brownian", weighted.mean, weighted.std_error, weighted.ess),
        ("direct-sde", direct_mean, direct_se, p["n_replicas"]),
    ]
    verdicts = [
        _verdict(
            f"importance-vs-direct 95% intervals overlap ({p['functional']})",
            weighted.mean, direct_mean,
            float(np.sqrt(weighted.std_error ** 2 + direct_se ** 2)), overlap,
        ),
        _verdict(
            "importance-sampling effective sample size",
            weighted.ess, p["min_ess"], None, weighted.ess >= p["min_ess"],
        ),
    ]
    return {"estimates": rows}, verdicts


def _run_edge_scale(p, seed, workers):
    rng = RngStream(seed, stream_id_for("edge-scale", 0))
    t = p["t_scaled"]
    out = {}
    samples = {}
    for tag, n in (("small", p["n_small"]), ("large", p["n_large"])):
        tau = (2.0 / p["beta"]) * (1.0 + t / n ** (1.0 / 3.0))
        ev = sample_oracle_ensemble(p["beta"], n, tau, p["n_samples"], rng.child(tag), workers)
        samples[tag] = edge_scale_marginal(ev[:, 0], p["beta"], n, t)
    ks = float(ks_2samp(samples["small"], samples["large"]).statistic)
    ok = ks < p["ks_threshold"]
    rows = [
        ("n_particles", *[f"q{k}" for k in range(10, 100, 10)]),
        (p["n_small"], *_deciles(samples["small"])),
        (p["n_large"], *_deciles(samples["large"])),
    ]
    verdicts = [
        _verdict(
            f"edge-scaled top-layer stabilization KS (N={p['n_small']} vs N={p['n_large']})",
            ks, p["ks_threshold"], None, ok,
        )
    ]
    return {"edge_deciles": rows, "edge_ks": [("ks", "threshold", "passed"), (ks, p["ks_threshold"], int(ok))]}, verdicts


# -- transport check -------------------------------------------------------

DEFAULT_TILTS = [
    {"tag": "quadratic", "c": 0.0},
    {"tag": "quadratic", "c": 0.5},
    {"tag": "power_sum", "c": 0.25, "p": 4.0},
    {"tag": "power_sum", "c": 1.0, "p": 1.0},
    {"tag": "exp_sum", "c": 0.5},
]


def _tilt_name(cfg: dict) -> str:
    return "-".join(f"{k}={cfg[k]}" for k in sorted(cfg))


def _g1_square(w):
    return w[:, 0] ** 2


def _g1_abs(w):
    return np.abs(w[:, 0])


def _g1_fourth(w):
    return w[:, 0] ** 4


def _g1_logcosh(w):
    return np.log(np.cosh(w[:, 0]))


def _g1_relu(w):
    return np.maximum(w[:, 0], 0.0)


def _g1_neg_square(w):
    return -(w[:, 0] ** 2)


TEST_FNS_1D = [
    ("square", _g1_square),
    ("abs", _g1_abs),
    ("fourth", _g1_fourth),
    ("log-cosh", _g1_logcosh),
    ("relu", _g1_relu),
    ("neg-square (control)", _g1_neg_square),
]


def _g2_sqnorm(w):
    return (w ** 2).sum(axis=1)


def _g2_diffsq(w):
    return (w[:, 0] - w[:, 1]) ** 2


def _g2_absfirst(w):
    return np.abs(w[:, 0])


def _g2_maxcoord(w):
    return np.maximum(w[:, 0], w[:, 1])


def _g2_logsumexp(w):
    return np.logaddexp(w[:, 0], w[:, 1])


def _g2_neg_sqnorm(w):
    return -(w ** 2).sum(axis=1)


TEST_FNS_2D = [
    ("sq-norm", _g2_sqnorm),
    ("diff-sq", _g2_diffsq),
    ("abs-first", _g2_absfirst),
    ("max-coord", _g2_maxcoord),
    ("log-sum-exp", _g2_logsumexp),
    ("neg-sq-norm (control)", _g2_neg_sqnorm),
]


def _run_transport_check(p, seed, workers):
    rng = RngStream(seed, stream_id_for("transport-check", 0))
    tilt_cfgs = p["tilts"] if p["tilts"] is not None else DEFAULT_TILTS
    tilts = [(cfg, convex_fn_from_config(cfg)) for cfg in tilt_cfgs]
    verdicts = []
    contraction_rows = [("tilt", "max_slope", "bound", "passed")]

    for cfg, tilt in tilts:
        tmap = brenier_map_1d(None, TiltedGaussian1D(tilt))
        lip = contraction_check(tmap)
        bound = 1.0 + p["contraction_tol"]
        ok = lip <= bound
        name = _tilt_name(cfg)
        contraction_rows.append((name, lip, bound, int(ok)))
        verdicts.append(
            _verdict(f"contraction of monotone rearrangement, tilt {name}", lip, bound, None, ok)
        )
        if cfg.get("tag") == "quadratic" and cfg.get("c") == 0.5:
            slopes = np.abs(np.diff(tmap.values) / np.diff(tmap.xs))
            dev = float(np.max(np.abs(slopes - 1.0 / np.sqrt(2.0))))
            ok2 = dev <= p["gaussian_case_tol"]
            verdicts.append(
                _verdict(
                    "gaussian-to-gaussian map slope uniformly 1/sqrt(2)",
                    dev, p["gaussian_case_tol"], None, ok2,
                )
            )

    harge_rows = [("case", "g", "convex", "lhs", "rhs", "pooled_se", "passed")]
    n = p["n_replicas"]
    for i, (cfg, tilt) in enumerate(tilts):
        gen_g = rng.child("harge-gamma", i).generator()
        gen_m = rng.child("harge-mu", i).generator()
        gam = gen_g.standard_normal((n, 1))
        mu = gen_m.standard_normal((n, 1))
        log_w = -tilt.batch(mu)
        is_identity = cfg.get("tag") == "quadratic" and cfg.get("c") == 0.0
        report = harge_check(
            gam, mu, None if is_identity else log_w, TEST_FNS_1D, rng.child("harge-rng", i)
        )
        name = _tilt_name(cfg)
        for row in report.harge_table:
            harge_rows.append(
                (name, row.name, int(row.convex), row.lhs, row.rhs, row.pooled_se, int(row.passed))
            )
            if "control" in row.name:
                verdicts.append(
                    _verdict(
                        f"non-convex control flagged (tilt {name}, g={row.name})",
                        float(row.convex), 0.0, None, not row.convex,
                    )
                )
            else:
                verdicts.append(
                    _verdict(
                        f"convex-order comparison tilt {name} g={row.name}",
                        row.lhs, row.rhs, row.pooled_se, row.passed,
                    )
                )
                if is_identity:
                    eq = abs(row.lhs - row.rhs) <= 3.0 * row.pooled_se
                    verdicts.append(
                        _verdict(
                            f"equality case (trivial tilt) g={row.name}",
                            row.lhs, row.rhs, row.pooled_se, eq,
                        )
                    )

    if p["bridge_enabled"]:
        spec = HamiltonianSpec(
            0.0, 1.0, integrand=Quadratic(1.0), quadrature=p["bridge_quadrature"]
        )
        times = np.asarray(spec.grid().times)
        t1, t2 = p["bridge_t1"], p["bridge_t2"]
        try:
            k1, k2 = spec.grid().index_of(t1), spec.grid().index_of(t2)
        except ValueError as e:
            raise ConfigError(f"bridge times must lie on the quadrature grid: {e}") from e
        nb = p["bridge_replicas"]
        gam_b = sample_bridges(times, 1, nb, rng.child("bridge-gamma").generator())
        mu_b = sample_bridges(times, 1, nb, rng.child("bridge-mu").generator())
        h_mu = np.trapezoid(mu_b[:, 0, :] ** 2, times, axis=1)
        gam2 = gam_b[:, 0, [k1, k2]]
        mu2 = mu_b[:, 0, [k1, k2]]
        report = harge_check(gam2, mu2, -h_mu, TEST_FNS_2D, rng.child("bridge-rng"))
        for row in report.harge_table:
            harge_rows.append(
                ("bridge-2time", row.name, int(row.convex), row.lhs, row.rhs, row.pooled_se, int(row.passed))
            )
            if "control" in row.name:
                verdicts.append(
                    _verdict(
                        f"non-convex control flagged (bridge marginal, g={row.name})",
                        float(row.convex), 0.0, None, not row.convex,
                    )
                )
            else:
                verdicts.append(
                    _verdict(
                        f"convex-order comparison bridge marginal ({t1:g},{t2:g}) g={row.name}",
                        row.lhs, row.rhs, row.pooled_se, row.passed,
                    )
                )

    sink_rows = [("case", "lipschitz", "target", "band", "converged", "iterations", "passed")]
    if p["sinkhorn_enabled"]:
        ns = p["sinkhorn_samples"]
        eps = p["sinkhorn_epsilon"]
        band = p["sinkhorn_band"]
        gen = rng.child("sinkhorn-clouds").generator()
        src = gen.standard_normal((ns, 2))
        cases = {
            "identity": src.copy(),
            "gaussian-half": gen.standard_normal((ns, 2)) / np.sqrt(2.0),
            "quartic-tilt": _rejection_quartic(gen, ns),
        }
        for i, (case, tgt) in enumerate(cases.items()):
            res = sinkhorn_map_2d(src, tgt, eps, p["sinkhorn_iters"], rng.child("sinkhorn-pairs", i))
            if case == "gaussian-half":
                target = 1.0 / np.sqrt(2.0)
                ok = abs(res.lipschitz_estimate - target) <= band
            else:
                target = 1.0
                ok = res.lipschitz_estimate <= 1.0 + band
            ok = bool(ok and res.converged)
            sink_rows.append(
                (case, res.lipschitz_estimate, target, band, int(res.converged), res.n_iterations, int(ok))
            )
            verdicts.append(
                _verdict(
                    f"entropic 2-d surrogate lipschitz, case {case} (eps={eps:g})",
                    res.lipschitz_estimate, target + (0.0 if case == "gaussian-half" else band),
                    None, ok,
                )
            )

    tables = {"contraction": contraction_rows, "harge": harge_rows}
    if p["sinkhorn_enabled"]:
        tables["sinkhorn"] = sink_rows
    return tables, verdicts


def _rejection_quartic(gen: np.random.Generator, n: int) -> np.ndarray:
    """Samples of density prop. to exp(-|w|^4/4) * N(0, I) by rejection."""
    out = np.empty((n, 2))
    have = 0
    while have < n:
        cand = gen.standard_normal((2 * (n - have) + 16, 2))
        acc = gen.random(cand.shape[0]) < np.exp(-0.25 * (cand ** 2).sum(axis=1) ** 2)
        take = cand[acc][: n - have]
        out[have : have + take.shape[0]] = take
        have += take.shape[0]
    return out


def _run_logconcavity_check(p, seed, workers):
    rng = RngStream(seed, stream_id_for("logconcavity-check", 0))
    if p["hamiltonian"] is None:
        spec = HamiltonianSpec(0.0, 1.0, integrand=convex_fn_from_config({"tag": "exp_sum", "c": 1.0}), quadrature=32)
    else:
        spec = HamiltonianSpec.from_config(p["hamiltonian"])
    xs = np.linspace(p["grid_lo"], p["grid_hi"], p["grid_n"])
    ys = xs.copy()
    logz, se_log = partition_function_field(spec, xs, ys, p["n_replicas"], rng.child("field"))
    pooled = float(np.sqrt(1.5) * np.sqrt(np.mean(se_log ** 2)))
    tol = p["tol_factor"] * pooled
    violations = logconcavity_scan(logz, tol)
    ok = len(violations) == 0
    verdicts = [
        _verdict(
            f"partition-function log-concavity scan ({p['grid_n']}x{p['grid_n']} grid, tol={tol:.3g})",
            float(len(violations)), 0.0, pooled, ok,
        )
    ]
    tables = {}
    field_rows = [("x", "y", "log_z", "se_log")]
    for i, xv in enumerate(xs):
        for j, yv in enumerate(ys):
            field_rows.append((float(xv), float(yv), float(logz[i, j]), float(se_log[i, j])))
    tables["log_partition"] = field_rows

    if p["negative_control"]:
        control = 0.5 * (xs[:, None] ** 2 + ys[None, :] ** 2)
        control_viol = logconcavity_scan(control, tol)
        verdicts.append(
            _verdict(
                "log-convex negative control is rejected by the scan",
                float(len(control_viol)), 0.0, None, len(control_viol) > 0,
            )
        )
    return tables, verdicts


def _run_oy_suite(p, seed, workers):
    drift = p["drift"] if p["drift"] is not None else [0.0] * p["n_levels"]
    params = PolymerParams(
        n_levels=p["n_levels"],
        drift=np.asarray(drift, dtype=float),
        t_max=p["t_max"],
        m_steps=p["m_steps"],
        n_replicas=p["n_replicas"],
    )
    rng = RngStream(seed, stream_id_for("oy-suite", 0))
    report = oy_modulus_suite(
        params, p["alpha"], (p["window"][0], p["window"][1]), rng, p_values=p["p_values"]
    )
    return {"oy_modulus": report.csv_rows()}, _moment_verdicts(report.moment_rows)


HANDLERS = {
    "dbm-simulate": _run_dbm_simulate,
    "oracle-compare": _run_oracle_compare,
    "moment-check": _run_moment_check,
    "tail-check": _run_tail_check,
    "holder-check": _run_holder_check,
    "girsanov-check": _run_girsanov_check,
    "edge-scale": _run_edge_scale,
    "transport-check": _run_transport_check,
    "logconcavity-check": _run_logconcavity_check,
    "oy-suite": _run_oy_suite,
}


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    exit_code: int
    all_passed: bool
    verdicts: list
    out_dir: Path
    tables: dict


def run_experiment(
    config: dict,
    out_dir=None,
    seed_override: int | None = None,
    workers_override: int | None = None,
) -> ExperimentResult:
    """Validate the config, run the experiment, write CSVs + summary + manifest.

    ``out_dir``, ``seed_override`` and ``workers_override`` mirror the CLI
    flags --out, --seed, --workers.
    """
    cfg = validate_config(config)
    if seed_override is not None:
        cfg["master_seed"] = int(seed_override)
    if workers_override is not None:
        if workers_override < 1:
            raise ConfigError("n_workers must be >= 1")
        cfg["n_workers"] = int(workers_override)
    target = out_dir or cfg.get("out_dir")
    if target is None:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    target = Path(target)
    target.mkdir(parents=True, exist_ok=True)

    kind = cfg["kind"]
    tables, verdicts = HANDLERS[kind](cfg["params"], cfg["master_seed"], cfg["n_workers"])

    all_passed = all(v["passed"] for v in verdicts)
    csv_paths = {}
    for name, rows in tables.items():
        path = target / f"{name}.csv"
        write_csv(path, rows)
        csv_paths[name] = str(path)

    summary = {
        "kind": kind,
        "master_seed": cfg["master_seed"],
        "verdicts": verdicts,
        "all_passed": all_passed,
    }
    (target / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    canonical = json.dumps(cfg, sort_keys=True)
    manifest = {
        "config": cfg,
        "config_sha256": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "master_seed": cfg["master_seed"],
        "n_workers": cfg["n_workers"],
        "package_version": __version__,
        "versions": {
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "numba": _numba_version(),
        },
        "outputs": sorted(csv_paths),
    }
    (target / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    return ExperimentResult(
        exit_code=EXIT_PASS if all_passed else EXIT_VERDICT_FAILURE,
        all_passed=all_passed,
        verdicts=verdicts,
        out_dir=target,
        tables=csv_paths,
    )


def _numba_version() -> str:
    try:
        import numba

        return numba.__version__
    except ImportError:
        return "disabled"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dysonlab",
        description="Run a declarative experiment config and write statistics + verdicts.",
    )
    parser.add_argument("--config", required=True, help="path to a JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--workers", type=int, default=None, help="override the worker count")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        result = run_experiment(
            config, out_dir=args.out, seed_override=args.seed, workers_override=args.workers
        )
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except IntegratorError as e:
        print(f"integrator failure: {e}", file=sys.stderr)
        return EXIT_INTEGRATOR_FAILURE
    except (OSError, MemoryError) as e:
        print(f"resource failure: {e}", file=sys.stderr)
        return EXIT_RESOURCE_FAILURE

    for v in result.verdicts:
        tag = "PASS" if v["passed"] else "FAIL"
        print(f"[{tag}] {v['check']}: lhs={v['lhs']:.6g} rhs={v['rhs']:.6g}")
    print(f"{'all checks passed' if result.all_passed else 'SOME CHECKS FAILED'} "
          f"-> {result.out_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
