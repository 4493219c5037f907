"""Plot-ready long-format term tables for CLI export.

Every smooth term contributes rows ``(term, panel, row, index, estimate,
se)``.  The panels mirror the standard four-panel reading of a summed
matrix term: the raw data, the smooth of the index variable, the product of
data and smooth, and the cumulative sum of the product whose final value is
exactly the term's contribution to the linear predictor.  Varying-coefficient
terms emit both the coefficient curve (panel ``smooth``) and the
per-observation product; plain smooths emit the curve only.
"""

from __future__ import annotations

import csv

import numpy as np

from .data import Dataset
from .errors import ValidationError
from .fit import FittedModel
from .inference import cumulative_effect, term_effect

TERMS_HEADER = ("term", "panel", "row", "index", "estimate", "se")


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def smooth_term_labels(fit: FittedModel) -> list:
    return [b.label for b in fit.blocks]


def term_table_rows(fit: FittedModel, data: Dataset | None, term: str,
                    n_grid: int = 100, seed: int = 0,
                    n_samples: int = 1000) -> list:
    """Rows for one term's panels; grid panels use grid ordinals as row ids."""
    block = fit.term_block(term)
    tt = block.term_type
    eff = term_effect(fit, term, data=data, n_grid=n_grid, seed=seed,
                      n_samples=n_samples)
    rows = []

    def curve(panel, c, row_ids=None):
        ids = range(len(c.index)) if row_ids is None else row_ids
        for i, (g, est, se) in zip(ids, zip(c.index, c.estimate, c.se)):
            rows.append((term, panel, i, _fmt(g), _fmt(est), _fmt(se)))

    if tt in ("smooth", "random_effect"):
        curve("smooth", eff.smooth)
        return rows

    if tt == "factor_smooth":
        for level, c in zip(eff.levels, eff.level_curves):
            for i, (g, est, se) in enumerate(zip(c.index, c.estimate, c.se)):
                rows.append((f"{term}[{level}]", "smooth", i, _fmt(g),
                             _fmt(est), _fmt(se)))
        return rows

    if tt == "tensor":
        for i, (l, x, est, se) in enumerate(zip(
                eff.surface.lag, eff.surface.x, eff.surface.estimate,
                eff.surface.se)):
            rows.append((term, "surface", i, _fmt(x), _fmt(est), _fmt(se)))
        return rows

    if tt == "vcm":
        curve("smooth", eff.smooth)
        if data is not None:
            z = data.scalar(block.margins[0].var)
            x = data.scalar(block.by_var)
            for i, (g, v) in enumerate(zip(z, x)):
                rows.append((term, "data", i, _fmt(g), _fmt(v), ""))
            for i, (g, est, se) in enumerate(zip(
                    eff.product.index, eff.product.estimate, eff.product.se)):
                rows.append((term, "product", i, _fmt(g), _fmt(est), _fmt(se)))
        return rows

    if tt == "sofr":
        curve("smooth", eff.smooth)
        if data is None:
            return rows
        V = data.matrix(block.margins[0].var)
        X = data.matrix(block.by_var)
        s, e = fit.spans[term]
        beta = fit.beta[s:e]
        Vq = fit.vcov[s:e, s:e]
        from .bases import eval_basis

        m = block.margins[0]
        n, T = V.shape
        B = eval_basis(m.spec, m.knots, V.ravel()).reshape(n, T, -1)
        w = np.ones(T) if block.weights is None else np.asarray(block.weights)
        sv = B @ beta                                 # s(V[i,t])
        sv_se = np.sqrt(np.einsum("itk,kl,itl->it", B, Vq, B))
        cum = cumulative_effect(fit, term, data, seed=seed, n_samples=n_samples)
        for i in range(n):
            for t in range(T):
                rows.append((term, "data", i, _fmt(V[i, t]), _fmt(X[i, t]), ""))
        for i in range(n):
            for t in range(T):
                prod = X[i, t] * w[t] * sv[i, t]
                rows.append((term, "product", i, _fmt(V[i, t]), _fmt(prod),
                             _fmt(abs(X[i, t] * w[t]) * sv_se[i, t])))
        for i in range(n):
            for t in range(T):
                se = cum.se[i, t] if cum.se is not None else None
                rows.append((term, "cumulative", i, _fmt(V[i, t]),
                             _fmt(cum.values[i, t]), _fmt(se)))
        return rows

    if tt == "dlm":
        for i, (l, x, est, se) in enumerate(zip(
                eff.surface.lag, eff.surface.x, eff.surface.estimate,
                eff.surface.se)):
            rows.append((term, "smooth", i, _fmt(x), _fmt(est), _fmt(se)))
        for i, (x, est, se) in enumerate(zip(
                eff.marginal.index, eff.marginal.estimate, eff.marginal.se)):
            rows.append((term, "marginal", i, _fmt(x), _fmt(est), _fmt(se)))
        if data is None:
            return rows
        from .inference import _dlm_cell_rows

        X = data.matrix(block.margins[0].var)
        L = data.matrix(block.margins[1].var)
        n, T = X.shape
        s, e = fit.spans[term]
        cells = _dlm_cell_rows(block, X.ravel(), L.ravel())
        per_cell = (cells @ fit.beta[s:e]).reshape(n, T)
        cell_se = np.sqrt(np.einsum(
            "ij,jk,ik->i", cells, fit.vcov[s:e, s:e], cells)).reshape(n, T)
        cum = cumulative_effect(fit, term, data, seed=seed, n_samples=n_samples)
        for i in range(n):
            for t in range(T):
                rows.append((term, "data", i, _fmt(L[i, t]), _fmt(X[i, t]), ""))
        for i in range(n):
            for t in range(T):
                rows.append((term, "product", i, _fmt(L[i, t]),
                             _fmt(per_cell[i, t]), _fmt(cell_se[i, t])))
        for i in range(n):
            for t in range(T):
                se = cum.se[i, t] if cum.se is not None else None
                rows.append((term, "cumulative", i, _fmt(L[i, t]),
                             _fmt(cum.values[i, t]), _fmt(se)))
        return rows

    raise ValidationError(f"no term table for term type {tt!r}")


def write_terms_csv(fit: FittedModel, data: Dataset | None, path,
                    terms=None, n_grid: int = 100, seed: int = 0,
                    n_samples: int = 1000) -> None:
    labels = list(terms) if terms else smooth_term_labels(fit)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TERMS_HEADER)
        for label in labels:
            for row in term_table_rows(fit, data, label, n_grid=n_grid,
                                       seed=seed, n_samples=n_samples):
                writer.writerow(row)


def write_predictions_csv(fit: FittedModel, data: Dataset, path,
                          scale: str = "link") -> None:
    from .inference import predict

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("row", "term", "estimate", "se", "scale"))
        if scale == "terms":
            per_term = predict(fit, data, scale="terms")
            for label, pred in per_term.items():
                for i in range(data.n):
                    writer.writerow((i, label, _fmt(pred.estimate[i]),
                                     _fmt(pred.se[i]), "terms"))
        else:
            pred = predict(fit, data, scale=scale)
            for i in range(data.n):
                writer.writerow((i, "", _fmt(pred.estimate[i]),
                                 _fmt(pred.se[i]), scale))


def write_samples_csv(fit: FittedModel, path, n_samples: int, seed: int) -> None:
    from .inference import posterior_sample

    draws = posterior_sample(fit, n_samples, seed)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("draw", "coef", "value"))
        for d in range(draws.shape[0]):
            for j in range(draws.shape[1]):
                writer.writerow((d, j, repr(float(draws[d, j]))))
