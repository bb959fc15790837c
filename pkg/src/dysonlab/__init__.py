"""dysonlab: a Monte Carlo laboratory for ordered interacting Brownian
particles and log-concave perturbations of Brownian motion.

Simulates the repulsive-drift particle SDE (with an exact random-matrix
oracle), evaluates Girsanov path weights and convex path Hamiltonians,
measures modulus-of-continuity statistics against Brownian baselines, runs
optimal-transport contraction and convex-order checks, and samples the
semi-discrete directed polymer.  The ``dysonlab`` CLI executes declarative
experiment configs with deterministic, worker-count-independent output.
"""

__version__ = "0.1.0"

from ._kernels import NUMBA_ENABLED
from .core import (
    DysonParams,
    McEstimate,
    PathBundle,
    PathEnsemble,
    RngStream,
    TimeGrid,
    check_weyl,
    make_uniform_grid,
    replica_stream,
    stream_id_for,
)

__all__ = [
    "__version__",
    "NUMBA_ENABLED",
    "DysonParams",
    "McEstimate",
    "PathBundle",
    "PathEnsemble",
    "RngStream",
    "TimeGrid",
    "check_weyl",
    "make_uniform_grid",
    "replica_stream",
    "stream_id_for",
]
