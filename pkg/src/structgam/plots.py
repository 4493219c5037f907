"""Matplotlib rendering of term effects to image files.

One figure per smooth term, written alongside the delimited exports by the
CLI ``terms --plot-dir`` path.  Matrix-argument terms get the four-panel
layout (data, smooth, product, cumulative); the summed lag tensor swaps the
data panel for its effect surface and lag-marginal curve.
"""

from __future__ import annotations

import re

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import Dataset
from .fit import FittedModel
from .inference import cumulative_effect, term_effect

MAX_SERIES = 40  # cap on per-observation lines per panel


def safe_filename(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_") or "term"


def _band(ax, curve, color="C0"):
    ax.plot(curve.index, curve.estimate, color=color)
    ax.fill_between(curve.index, curve.estimate - 1.96 * curve.se,
                    curve.estimate + 1.96 * curve.se, alpha=0.25,
                    color=color, linewidth=0)


def _series(ax, index, values, color="C0"):
    step = max(1, values.shape[0] // MAX_SERIES)
    for i in range(0, values.shape[0], step):
        ax.plot(index[i], values[i], color=color, alpha=0.3, linewidth=0.7)


def render_term_figure(fit: FittedModel, data: Dataset | None, term: str,
                       path, n_grid: int = 100, seed: int = 0,
                       n_samples: int = 1000) -> None:
    eff = term_effect(fit, term, data=data, n_grid=n_grid, seed=seed,
                      n_samples=n_samples)
    block = fit.term_block(term)
    tt = block.term_type

    if tt in ("smooth", "vcm"):
        ncols = 3 if (tt == "vcm" and data is not None) else 1
        fig, axes = plt.subplots(1, ncols, figsize=(4 * ncols, 3.2),
                                 squeeze=False)
        ax = axes[0, 0]
        if tt == "vcm" and data is not None:
            z = data.scalar(block.margins[0].var)
            x = data.scalar(block.by_var)
            ax.plot(z, x, ".", markersize=3, alpha=0.5)
            ax.set_title("data")
            ax.set_xlabel(block.margins[0].var)
            ax.set_ylabel(block.by_var)
            ax = axes[0, 1]
        _band(ax, eff.smooth)
        ax.set_title("coefficient" if tt == "vcm" else term)
        ax.set_xlabel(block.margins[0].var)
        if tt == "vcm" and data is not None:
            ax = axes[0, 2]
            ax.plot(eff.product.index, eff.product.estimate, ".",
                    markersize=3, alpha=0.5)
            ax.set_title("product")
            ax.set_xlabel(block.margins[0].var)

    elif tt == "random_effect":
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        idx = np.arange(len(eff.levels))
        ax.errorbar(idx, eff.smooth.estimate, yerr=1.96 * eff.smooth.se,
                    fmt="o", capsize=3)
        ax.axhline(0.0, color="0.6", linewidth=0.8)
        ax.set_xticks(idx)
        ax.set_xticklabels(eff.levels, rotation=30, ha="right")
        ax.set_title(term)
        axes = None

    elif tt == "factor_smooth":
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for level, c in zip(eff.levels, eff.level_curves):
            ax.plot(c.index, c.estimate, label=str(level))
        ax.legend(fontsize=8)
        ax.set_title(term)
        ax.set_xlabel(block.margins[0].var)

    elif tt == "tensor":
        fig, ax = plt.subplots(figsize=(4.5, 3.6))
        n = int(np.sqrt(eff.surface.x.size))
        sc = ax.pcolormesh(eff.surface.x.reshape(n, n),
                           eff.surface.lag.reshape(n, n),
                           eff.surface.estimate.reshape(n, n),
                           shading="auto")
        fig.colorbar(sc, ax=ax)
        ax.set_title(term)
        ax.set_xlabel(block.margins[0].var)
        ax.set_ylabel(block.margins[1].var)

    elif tt == "sofr":
        fig, axes = plt.subplots(2, 2, figsize=(8, 6))
        if data is not None:
            V = data.matrix(block.margins[0].var)
            X = data.matrix(block.by_var)
            _series(axes[0, 0], V, X)
        axes[0, 0].set_title("data")
        _band(axes[0, 1], eff.smooth)
        axes[0, 1].set_title("smooth")
        if data is not None:
            from .bases import eval_basis

            m = block.margins[0]
            s, e = fit.spans[term]
            n, T = V.shape
            B = eval_basis(m.spec, m.knots, V.ravel()).reshape(n, T, -1)
            prod = X * (B @ fit.beta[s:e])
            _series(axes[1, 0], V, prod, color="C1")
            cum = cumulative_effect(fit, term, data, seed=seed,
                                    n_samples=n_samples)
            _series(axes[1, 1], cum.index, cum.values, color="C2")
        axes[1, 0].set_title("product")
        axes[1, 1].set_title("cumulative")
        for ax in axes[1]:
            ax.set_xlabel(block.margins[0].var)

    elif tt == "dlm":
        fig, axes = plt.subplots(2, 2, figsize=(8, 6))
        lag_vals = np.unique(eff.surface.lag)
        n_lag = lag_vals.size
        n_x = eff.surface.x.size // n_lag
        ax = axes[0, 0]
        sc = ax.pcolormesh(eff.surface.x.reshape(n_lag, n_x),
                           eff.surface.lag.reshape(n_lag, n_x),
                           eff.surface.estimate.reshape(n_lag, n_x),
                           shading="auto")
        fig.colorbar(sc, ax=ax)
        ax.set_title("effect surface")
        ax.set_xlabel(block.margins[0].var)
        ax.set_ylabel(block.margins[1].var)
        _band(axes[0, 1], eff.marginal)
        axes[0, 1].set_title("marginal over lags")
        axes[0, 1].set_xlabel(block.margins[0].var)
        if data is not None:
            L = data.matrix(block.margins[1].var)
            X = data.matrix(block.margins[0].var)
            _series(axes[1, 0], L, X, color="C1")
            cum = cumulative_effect(fit, term, data, seed=seed,
                                    n_samples=n_samples)
            _series(axes[1, 1], cum.index, cum.values, color="C2")
        axes[1, 0].set_title("data")
        axes[1, 1].set_title("cumulative")
        for ax in axes[1]:
            ax.set_xlabel(block.margins[1].var)

    else:
        raise ValueError(f"no figure for term type {tt!r}")

    fig.suptitle(term, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_all_terms(fit: FittedModel, data: Dataset | None, outdir,
                     n_grid: int = 100, seed: int = 0,
                     n_samples: int = 1000) -> list:
    """Render one PNG per smooth term into ``outdir``; returns the paths."""
    import os

    os.makedirs(outdir, exist_ok=True)
    written = []
    for block in fit.blocks:
        path = os.path.join(outdir, f"term_{safe_filename(block.label)}.png")
        render_term_figure(fit, data, block.label, path, n_grid=n_grid,
                           seed=seed, n_samples=n_samples)
        written.append(path)
    return written
