"""Synthetic datasets with known ground truth, for recovery scoring.

Three generators mirror the three structured-term constructions:

* ``vcm``  -- y = sin(z) * x + noise; the target is the coefficient curve
  theta(z) = sin(z) on a 100-point grid over [0, 2*pi].
* ``sofr`` -- y = sum_t X[i,t] * s(v_t) + noise with the weight curve
  s(v) = exp(-v) * sin(2*pi*v) on a T-point grid over [0, 1].
* ``dlm``  -- y = sum_t f(X[i,t], t) + noise with the lag surface
  f(x, t) = x * exp(-t / 10) over lags 1..T.

Each generator returns ``(dataset, truth)`` where the truth dict tabulates
the true function on the export grid; generation is deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .errors import ValidationError

VCM_GRID = 100


def _theta(z):
    return np.sin(z)


def _probe(v):
    return np.exp(-v) * np.sin(2.0 * np.pi * v)


def _lag_surface(x, t):
    return x * np.exp(-t / 10.0)


def simulate_vcm(n: int = 500, seed: int = 0, sigma: float = 0.1):
    if n < 10:
        raise ValidationError("vcm simulation needs n >= 10")
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.0, 2.0 * np.pi, n)
    x = rng.standard_normal(n)
    y = _theta(z) * x + sigma * rng.standard_normal(n)
    data = Dataset.from_arrays({"y": y, "z": z, "x": x})
    # tabulate over the realized index range so the grid stays evaluable
    grid = np.linspace(z.min(), z.max(), VCM_GRID)
    truth = {
        "kind": "vcm",
        "formula": "y ~ s(z, by=x)",
        "sigma": sigma,
        "grid": grid.tolist(),
        "theta": _theta(grid).tolist(),
    }
    return data, truth


def simulate_sofr(n: int = 300, T: int = 50, seed: int = 0, sigma: float = 1.0):
    if n < 10 or T < 2:
        raise ValidationError("sofr simulation needs n >= 10 and T >= 2")
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, T)
    V = np.tile(grid, (n, 1))
    X = rng.standard_normal((n, T))
    y = X @ _probe(grid) + sigma * rng.standard_normal(n)
    data = Dataset.from_arrays({"y": y, "V": V, "X": X},
                               index_values={"V": grid})
    truth = {
        "kind": "sofr",
        "formula": "y ~ s(V, by=X)",
        "sigma": sigma,
        "index": grid.tolist(),
        "probe": _probe(grid).tolist(),
    }
    return data, truth


def simulate_dlm(n: int = 400, T: int = 30, seed: int = 0, sigma: float = 0.5):
    if n < 10 or T < 2:
        raise ValidationError("dlm simulation needs n >= 10 and T >= 2")
    rng = np.random.default_rng(seed)
    lags = np.arange(1.0, T + 1.0)
    L = np.tile(lags, (n, 1))
    X = rng.standard_normal((n, T))
    contrib = _lag_surface(X, L[None, 0, :]).sum(axis=1)
    y = contrib + sigma * rng.standard_normal(n)
    data = Dataset.from_arrays({"y": y, "Xlag": X, "Lag": L},
                               index_values={"Lag": lags})
    xg = np.linspace(-3.0, 3.0, 60)
    surf = [
        {"lag": float(t), "x": xg.tolist(), "f": _lag_surface(xg, t).tolist()}
        for t in lags
    ]
    truth = {
        "kind": "dlm",
        "formula": "y ~ te(Xlag, Lag, k=(5, 5))",
        "sigma": sigma,
        "lags": lags.tolist(),
        "surface": surf,
        "row_contribution_rule": "sum_t x[t] * exp(-t/10)",
    }
    return data, truth


def dlm_row_truth(data: Dataset) -> np.ndarray:
    """True per-row term contribution for a dlm dataset (for held-out scoring)."""
    X = data.matrix("Xlag")
    L = data.matrix("Lag")
    return _lag_surface(X, L).sum(axis=1)


_GENERATORS = {"vcm": simulate_vcm, "sofr": simulate_sofr, "dlm": simulate_dlm}


def simulate(kind: str, n: int, T: int | None = None, seed: int = 0,
             sigma: float | None = None):
    if kind not in _GENERATORS:
        raise ValidationError(
            f"unknown simulation kind {kind!r}; choose from {sorted(_GENERATORS)}"
        )
    kwargs = {"n": n, "seed": seed}
    if sigma is not None:
        kwargs["sigma"] = sigma
    if kind != "vcm" and T is not None:
        kwargs["T"] = T
    return _GENERATORS[kind](**kwargs)
