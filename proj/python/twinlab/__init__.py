"""Desk-scale neural digital-twin laboratory.

Thin wrapper over the C++ core: simulation-backed scaling sweeps, log-sigmoid
law fitting, shared-variance dimensionality, capability trends, and the
distillation dataset utilities. Structured results cross the boundary as JSON
and are decoded here into plain dicts.
"""

import json as _json

from ._core import (
    RsmKernel,
    analytic_feve,
    generate_dataset,
    logit,
    rsm,
    sha256_hex,
    sigmoid,
    student_t_cdf,
    svca_planted_reliable,
    wrong_core_asymptote,
)
from . import _core as _c

__version__ = "0.1.0"

__all__ = [
    "RsmKernel",
    "analytic_feve",
    "fit_law",
    "fit_trend",
    "generate_dataset",
    "logit",
    "rsm",
    "sha256_hex",
    "sigmoid",
    "simulate_sweep",
    "student_t_cdf",
    "svca_planted_reliable",
    "wrong_core_asymptote",
]


def simulate_sweep(m, t_grid, replicates=5, alpha=1.0, seed=0):
    """LNP scaling sweep; returns the curve as a dict (see ScalingCurve)."""
    return _json.loads(_c.simulate_sweep_json(m, list(t_grid), replicates, alpha, seed))


def fit_law(t, y, form="basic", seed=0x5EEDF17):
    """Fit a log-sigmoid scaling law to (t, y) points; returns a dict."""
    return _json.loads(_c.fit_law_json(list(t), list(y), form, seed))


def fit_trend(years, values):
    """Bayesian log-linear trend fit; returns a dict with doubling time."""
    return _json.loads(_c.fit_trend_json(list(years), list(values)))
