"""Python access to the l2gmom native library.

Panels come back as dicts of ``dates`` (ISO strings), ``tickers`` and a
``prices`` array of shape (dates, assets) with NaN where a price is missing.
"""

import json

from . import _core
from ._core import (
    IoError,
    NumericError,
    ValidationError,
    build_features,
    learn_graph,
    load_csv,
    metrics,
    mse,
    neg_sharpe,
    position_scale,
    run_cli,
    unrolled_graph,
)

__all__ = [
    "IoError",
    "NumericError",
    "ValidationError",
    "build_features",
    "generate_synthetic",
    "gradcheck",
    "learn_graph",
    "load_csv",
    "metrics",
    "mse",
    "neg_sharpe",
    "position_scale",
    "run_cli",
    "unrolled_graph",
]


def generate_synthetic(**spec):
    """Synthetic price panel; keyword arguments are the synthetic spec fields."""
    return _core.generate_synthetic(json.dumps(spec))


def gradcheck(seed=0, inject_fault=False):
    """Finite-difference report for the unrolled graph layer."""
    return json.loads(_core.gradcheck(seed, inject_fault))
