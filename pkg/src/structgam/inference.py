"""Posterior inference and effect extraction from a fitted model.

Uncertainty bands default to the analytic Gaussian-posterior standard errors
(``V_beta = phi * H^{-1}``); posterior sampling is used where the reported
quantity is a functional of the whole coefficient vector (the lag-marginal
curve of a summed lag tensor and the bands on cumulative trajectories).
All intervals are pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bases import eval_basis
from .data import Dataset
from .errors import ExtrapolationError, ValidationError
from .fit import FittedModel, edf_breakdown
from .terms import DesignBlock, Margin

DEFAULT_GRID = 100
DLM_X_GRID = 60


def edf(fit: FittedModel):
    """Per-term and total effective degrees of freedom."""
    if fit.H is None or fit.XtWX is None:
        return dict(fit.edf_terms), fit.edf_total
    return edf_breakdown(fit.H, fit.XtWX, fit.spans)


def coef_covariance(fit: FittedModel) -> np.ndarray:
    """Bayesian coefficient covariance ``phi * H^{-1}``."""
    if fit.H is None:
        return fit.vcov
    Hinv = np.linalg.inv(fit.H)
    return fit.phi * 0.5 * (Hinv + Hinv.T)


def _vcov_factor(vcov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(vcov)
    except np.linalg.LinAlgError:
        # semi-definite fallback: eigenvalue square root
        vals, vecs = np.linalg.eigh(vcov)
        vals = np.clip(vals, 0.0, None)
        return vecs * np.sqrt(vals)[None, :]


def posterior_sample(fit: FittedModel, n_samples: int, seed: int) -> np.ndarray:
    """Draws from the Gaussian coefficient posterior N(beta, V_beta)."""
    L = _vcov_factor(fit.vcov)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_samples, fit.beta.size))
    return fit.beta[None, :] + eps @ L.T


# ---------------------------------------------------------------------------
# design reconstruction


def design_rows(fit: FittedModel, data: Dataset):
    """Rebuild design rows for new data from the stored term recipes.

    Returns ``(X, offset)``; raises ``ExtrapolationError`` listing every
    covariate that falls outside its training knot range.
    """
    p = fit.beta.size
    X = np.zeros((data.n, p))
    offending = []
    for label in fit.labels:
        s, e = fit.spans[label]
        if label == "intercept":
            X[:, s] = 1.0
        elif label in fit.linear_vars:
            X[:, s] = data.scalar(label)
        else:
            block = fit.term_block(label)
            try:
                X[:, s:e] = block.evaluate(data)
            except ExtrapolationError as exc:
                offending.append(f"{label}: {exc}")
    if offending:
        raise ExtrapolationError(
            "covariates outside the training range -- " + "; ".join(offending)
        )
    offset = data.scalar(fit.offset_var) if fit.offset_var else None
    return X, offset


@dataclass
class Prediction:
    estimate: np.ndarray
    se: np.ndarray


def predict(fit: FittedModel, data: Dataset, scale: str = "link"):
    """Predict on the link or response scale, or per-term contributions.

    ``scale='terms'`` returns a dict mapping each term label (plus
    ``'offset'`` when present) to a :class:`Prediction`; summing the term
    estimates and the offset recovers the link-scale prediction exactly.
    """
    if scale not in ("link", "response", "terms"):
        raise ValidationError(f"unknown prediction scale {scale!r}")
    X, offset = design_rows(fit, data)
    if scale == "terms":
        out = {}
        for label in fit.labels:
            s, e = fit.spans[label]
            rows = X[:, s:e]
            est = rows @ fit.beta[s:e]
            se = np.sqrt(np.einsum("ij,jk,ik->i", rows, fit.vcov[s:e, s:e], rows))
            out[label] = Prediction(estimate=est, se=se)
        if fit.offset_var:
            out["offset"] = Prediction(estimate=offset, se=np.zeros(data.n))
        return out
    eta = X @ fit.beta
    if offset is not None:
        eta = eta + offset
    se = np.sqrt(np.einsum("ij,jk,ik->i", X, fit.vcov, X))
    if scale == "link":
        return Prediction(estimate=eta, se=se)
    family = fit.family
    mu = family.inv_link(eta)
    dmu = family.dmu_deta(eta)
    return Prediction(estimate=mu, se=se * np.abs(dmu))


# ---------------------------------------------------------------------------
# term effects


@dataclass
class EffectCurve:
    index: np.ndarray
    estimate: np.ndarray
    se: np.ndarray


@dataclass
class EffectSurface:
    """Tensor effect tabulated per lag over the x-range observed at that lag."""

    lag: np.ndarray
    x: np.ndarray
    estimate: np.ndarray
    se: np.ndarray


@dataclass
class TermEffect:
    term: str
    kind: str
    smooth: EffectCurve | None = None
    product: EffectCurve | None = None
    surface: EffectSurface | None = None
    marginal: EffectCurve | None = None
    levels: tuple | None = None
    level_curves: list | None = None


def _curve_se(rows: np.ndarray, vcov_block: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,jk,ik->i", rows, vcov_block, rows))


def _margin_grid(margin: Margin, n: int) -> np.ndarray:
    return np.linspace(margin.knots.lo, margin.knots.hi, n)


def _smooth_rows(block: DesignBlock, grid: np.ndarray) -> np.ndarray:
    m = block.margins[0]
    B = eval_basis(m.spec, m.knots, grid)
    return B @ block.Z if block.Z is not None else B


def term_effect(fit: FittedModel, term: str, data: Dataset | None = None,
                grid=None, n_grid: int = DEFAULT_GRID,
                seed: int = 0, n_samples: int = 1000) -> TermEffect:
    """Tabulated effect of one term.

    Varying-coefficient terms report both the coefficient curve (the smooth
    itself) and, when data is supplied, the per-observation product of the
    curve with the multiplier -- the coefficient view is the honest summary,
    the product view is what enters the linear predictor.  Summed lag tensors
    report the tensor surface over the x-range observed at each lag plus the
    lag-marginal sum with posterior-sample bands.
    """
    block = fit.term_block(term)
    s, e = fit.spans[term]
    beta = fit.beta[s:e]
    V = fit.vcov[s:e, s:e]
    tt = block.term_type

    if tt in ("smooth", "tensor"):
        if tt == "tensor":
            return _tensor_effect(fit, block, beta, V, n_grid)
        g = np.asarray(grid, dtype=float) if grid is not None else _margin_grid(
            block.margins[0], n_grid)
        rows = _smooth_rows(block, g)
        return TermEffect(term=term, kind=tt,
                          smooth=EffectCurve(g, rows @ beta, _curve_se(rows, V)))

    if tt == "random_effect":
        levels = block.margins[0].knots.levels
        idx = np.arange(len(levels))
        rows = np.eye(len(levels))
        return TermEffect(
            term=term, kind=tt, levels=levels,
            smooth=EffectCurve(idx.astype(float), rows @ beta, _curve_se(rows, V)),
        )

    if tt == "vcm":
        g = np.asarray(grid, dtype=float) if grid is not None else _margin_grid(
            block.margins[0], n_grid)
        rows = _smooth_rows(block, g)
        eff = TermEffect(term=term, kind=tt,
                         smooth=EffectCurve(g, rows @ beta, _curve_se(rows, V)))
        if data is not None:
            z = data.scalar(block.margins[0].var)
            by = data.scalar(block.by_var)
            zrows = _smooth_rows(block, z)
            theta = zrows @ beta
            theta_se = _curve_se(zrows, V)
            eff.product = EffectCurve(z, theta * by, theta_se * np.abs(by))
        return eff

    if tt == "factor_smooth":
        g = np.asarray(grid, dtype=float) if grid is not None else _margin_grid(
            block.margins[0], n_grid)
        m = block.margins[0]
        B = eval_basis(m.spec, m.knots, g)
        curves = []
        pos = 0
        for Zf in block.level_transforms:
            rows = B @ Zf
            width = rows.shape[1]
            bf = beta[pos:pos + width]
            Vf = V[pos:pos + width, pos:pos + width]
            curves.append(EffectCurve(g, rows @ bf, _curve_se(rows, Vf)))
            pos += width
        eff = TermEffect(term=term, kind=tt, levels=block.by_levels)
        eff.smooth = curves[0]
        eff.level_curves = curves
        return eff

    if tt == "sofr":
        g = np.asarray(grid, dtype=float) if grid is not None else _margin_grid(
            block.margins[0], n_grid)
        rows = _smooth_rows(block, g)
        return TermEffect(term=term, kind=tt,
                          smooth=EffectCurve(g, rows @ beta, _curve_se(rows, V)))

    if tt == "dlm":
        return _dlm_effect(fit, block, beta, V, data, n_grid, seed, n_samples)

    raise ValidationError(f"term_effect cannot handle term type {tt!r}")


def _tensor_effect(fit, block, beta, V, n_grid):
    gx = _margin_grid(block.margins[0], n_grid)
    gy = _margin_grid(block.margins[1], n_grid)
    GX, GY = np.meshgrid(gx, gy, indexing="ij")
    cols = Dataset.from_arrays({
        block.margins[0].var: GX.ravel(), block.margins[1].var: GY.ravel(),
    })
    rows = block.evaluate(cols)
    return TermEffect(
        term=block.label, kind="tensor",
        surface=EffectSurface(lag=GY.ravel(), x=GX.ravel(),
                              estimate=rows @ beta, se=_curve_se(rows, V)),
    )


def _dlm_cell_rows(block: DesignBlock, x: np.ndarray, lag: np.ndarray) -> np.ndarray:
    """Constrained tensor rows for individual (x, lag) cells."""
    mx, ml = block.margins
    Bx = eval_basis(mx.spec, mx.knots, x)
    Bl = eval_basis(ml.spec, ml.knots, lag)
    raw = (Bx[:, :, None] * Bl[:, None, :]).reshape(x.size, -1)
    return raw @ block.Z if block.Z is not None else raw


def _dlm_effect(fit, block, beta, V, data, n_grid, seed, n_samples):
    mx, ml = block.margins
    if data is not None:
        Xobs = data.matrix(mx.var)
        Lobs = data.matrix(ml.var)
        lag_values = np.unique(Lobs)
        per_lag_range = [
            (Xobs[Lobs == l].min(), Xobs[Lobs == l].max()) for l in lag_values
        ]
    else:
        lag_values = np.unique(np.linspace(ml.knots.lo, ml.knots.hi,
                                           int(round(ml.knots.hi - ml.knots.lo)) + 1))
        per_lag_range = [(mx.knots.lo, mx.knots.hi)] * lag_values.size

    lags, xs = [], []
    for l, (lo, hi) in zip(lag_values, per_lag_range):
        g = np.linspace(lo, hi, DLM_X_GRID)
        lags.append(np.full(DLM_X_GRID, l))
        xs.append(g)
    lag_arr = np.concatenate(lags)
    x_arr = np.concatenate(xs)
    rows = _dlm_cell_rows(block, x_arr, lag_arr)
    surface = EffectSurface(lag=lag_arr, x=x_arr, estimate=rows @ beta,
                            se=_curve_se(rows, V))

    # marginal over lags: sum_t s(x, t) on a common x grid, sampled bands
    gx = np.linspace(mx.knots.lo, mx.knots.hi, DLM_X_GRID)
    marg_rows = np.zeros((gx.size, beta.size))
    for l in lag_values:
        marg_rows += _dlm_cell_rows(block, gx, np.full(gx.size, float(l)))
    est = marg_rows @ beta
    s, e = fit.spans[block.label]
    draws = posterior_sample(fit, n_samples, seed)[:, s:e]
    se = (marg_rows @ draws.T).std(axis=1, ddof=1)
    marginal = EffectCurve(gx, est, se)
    return TermEffect(term=block.label, kind="dlm", surface=surface,
                      marginal=marginal)


# ---------------------------------------------------------------------------
# cumulative effects


@dataclass
class CumulativeEffect:
    rows: np.ndarray        # requested row indices
    index: np.ndarray       # (n_rows, T) column index values
    values: np.ndarray      # (n_rows, T) partial sums over columns
    se: np.ndarray | None   # posterior-sample bands, same shape


def cumulative_effect(fit: FittedModel, term: str, data: Dataset,
                      rows=None, seed: int = 0,
                      n_samples: int = 1000) -> CumulativeEffect:
    """Per-column partial sums of a summed matrix term for chosen rows.

    The final partial sum equals that row's term contribution to the linear
    predictor.  Only summed functional terms and summed lag tensors
    accumulate over columns.
    """
    block = fit.term_block(term)
    if block.term_type not in ("sofr", "dlm"):
        raise ValidationError(
            f"term {term!r} has type {block.term_type!r}; cumulative effects "
            "apply to summed matrix terms only"
        )
    s, e = fit.spans[term]
    beta = fit.beta[s:e]
    rows = np.arange(data.n) if rows is None else np.asarray(rows, dtype=int)

    if block.term_type == "sofr":
        V = data.matrix(block.margins[0].var)[rows]
        X = data.matrix(block.by_var)[rows]
        n, T = V.shape
        m = block.margins[0]
        B = eval_basis(m.spec, m.knots, V.ravel()).reshape(n, T, -1)
        w = np.ones(T) if block.weights is None else np.asarray(block.weights)
        cells = np.einsum("itk,it->itk", B, X * w[None, :])
        index = V
    else:
        X = data.matrix(block.margins[0].var)[rows]
        L = data.matrix(block.margins[1].var)[rows]
        n, T = X.shape
        cells = _dlm_cell_rows(block, X.ravel(), L.ravel()).reshape(n, T, -1)
        index = L

    per_cell = cells @ beta
    values = np.cumsum(per_cell, axis=1)
    se = None
    if n_samples > 0:
        draws = posterior_sample(fit, n_samples, seed)[:, s:e]
        per_cell_draws = np.einsum("itk,dk->dit", cells, draws)
        se = np.cumsum(per_cell_draws, axis=2).std(axis=0, ddof=1)
    return CumulativeEffect(rows=rows, index=index, values=values, se=se)
