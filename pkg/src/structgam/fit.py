"""Penalized IRLS fitting with outer smoothing-parameter selection.

The inner loop is standard penalized iteratively reweighted least squares:
working response ``z = eta0 + (y - mu) / (dmu/deta)`` (``eta0`` excludes the
offset) and weights ``w = (dmu/deta)^2 / V(mu)``, solving
``(X'WX + sum_j lambda_j S_j) beta = X'Wz`` by Cholesky with a one-shot ridge
fallback on numerical indefiniteness.  Step halving (up to 30 halvings)
guards against penalized-deviance increases.

Smoothing parameters minimize GCV ``n * D / (n - gamma * EDF)^2`` where D is
the weighted working-model deviance of the converged fit (performance
iteration for non-Gaussian families).  The search is a coarse per-slot
log10 grid over [-6, 6] (7 points, coordinate-wise, 2 sweeps) followed by
Nelder-Mead on the joint log-lambda vector.  Everything is deterministic
given the inputs.

The negative-binomial dispersion is chosen by an outer golden-section search
on log kappa, re-optimizing lambda at every probe and scoring by
``-2 * loglik + 2 * EDF + 2``; the reported model AIC is
``deviance + 2 * EDF`` (plus 2 when kappa was estimated).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .data import Dataset
from .errors import FitError, ValidationError
from .families import Family, NegativeBinomial, family_from_name
from .formula import parse, resolve
from .terms import AssembledDesign, assemble_model, build_term

logger = logging.getLogger(__name__)

#: sentinel score for infeasible smoothing parameters (EDF >= n, PIRLS failure)
GCV_MAX = 1e300

PIRLS_TOL = 1e-8
MAX_HALVINGS = 30

_LOG_KAPPA_LO = math.log(1e-4)
_LOG_KAPPA_HI = math.log(1e2)


@dataclass
class FitOptions:
    gamma: float = 1.0
    lambda_fixed: object = None  # sequence of lambda values, skips selection
    kappa: float | None = None   # fix the negbin dispersion
    seed: int | None = None      # recorded for provenance; fitting is exact
    max_pirls_iter: int = 200


@dataclass
class PirlsResult:
    beta: np.ndarray
    deviance: float
    penalized_deviance: float
    w: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    converged: bool
    iterations: int
    ridge_used: bool
    H: np.ndarray
    XtWX: np.ndarray


def _solve_spd(H: np.ndarray, rhs: np.ndarray):
    """Cholesky solve with a single ridge retry; returns (x, factor, ridged)."""
    try:
        c = scipy.linalg.cho_factor(H, lower=True)
        return scipy.linalg.cho_solve(c, rhs), c, False
    except scipy.linalg.LinAlgError:
        p = H.shape[0]
        ridge = 1e-10 * np.trace(H) / p
        H2 = H + ridge * np.eye(p)
        try:
            c = scipy.linalg.cho_factor(H2, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise FitError(
                "penalized Hessian is not positive definite even after the "
                "ridge fallback; the model is unidentifiable"
            ) from exc
        return scipy.linalg.cho_solve(c, rhs), c, True


def pirls(X, penalties, lam, family: Family, y, offset=None, weights=None,
          max_iter: int = 200) -> PirlsResult:
    """Penalized IRLS at fixed smoothing parameters.

    ``penalties`` is a list of p x p (zero-padded) penalty matrices matched
    to the entries of ``lam``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    o = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    wts = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if len(penalties) != lam.size:
        raise ValidationError("one lambda per penalty matrix is required")
    if lam.size and np.any(lam < 0):
        raise ValidationError("smoothing parameters must be nonnegative")
    P = np.zeros((p, p))
    for l, S in zip(lam, penalties):
        P += l * S

    mu = family.initial_mu(y)
    eta = family.link(mu)
    beta = None
    pen_dev_prev = np.inf
    dev = np.inf
    converged = False
    ridge_any = False
    it = 0
    for it in range(1, max_iter + 1):
        dmu = family.dmu_deta(eta)
        var = family.variance(mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = wts * dmu * dmu / var
            z = (eta - o) + (y - mu) / dmu
        if not (np.all(np.isfinite(w)) and np.all(w >= 0) and np.all(np.isfinite(z))):
            raise FitError(
                f"non-finite working weights at PIRLS iteration {it} "
                "(fitted mean at the boundary of the link domain)"
            )
        WX = X * w[:, None]
        H = X.T @ WX + P
        beta_new, _, ridged = _solve_spd(H, WX.T @ z)
        ridge_any = ridge_any or ridged

        for _ in range(MAX_HALVINGS + 1):
            eta_new = X @ beta_new + o
            mu_new = family.inv_link(eta_new)
            dev = family.deviance(y, mu_new, wts)
            pen_dev = dev + float(beta_new @ P @ beta_new)
            if np.isfinite(pen_dev) and (beta is None or pen_dev <= pen_dev_prev):
                break
            if beta is None:
                break
            beta_new = 0.5 * (beta_new + beta)

        beta, eta, mu = beta_new, eta_new, mu_new
        if abs(pen_dev_prev - pen_dev) < PIRLS_TOL * (pen_dev + 0.1):
            pen_dev_prev = pen_dev
            converged = True
            break
        pen_dev_prev = pen_dev

    # weights and Hessian at the solution, for EDF / covariance / GCV
    dmu = family.dmu_deta(eta)
    var = family.variance(mu)
    w = wts * dmu * dmu / var
    z = (eta - o) + (y - mu) / dmu
    XtWX = X.T @ (X * w[:, None])
    H = XtWX + P
    return PirlsResult(
        beta=beta, deviance=dev, penalized_deviance=pen_dev_prev,
        w=w, z=z, eta=eta, mu=mu, converged=converged, iterations=it,
        ridge_used=ridge_any, H=H, XtWX=XtWX,
    )


def edf_breakdown(H: np.ndarray, XtWX: np.ndarray, spans: dict):
    """Per-span and total effective degrees of freedom.

    F = H^{-1} X'WX; a span's EDF is the sum of diag(F) over its columns and
    the total is trace(F).
    """
    F = np.linalg.solve(H, XtWX)
    d = np.diag(F)
    per = {label: float(d[s:e].sum()) for label, (s, e) in spans.items()}
    return per, float(np.trace(F))


class PenalizedGLM:
    """Workspace binding an assembled design, family and response."""

    def __init__(self, design: AssembledDesign, family: Family, y,
                 weights=None, gamma: float = 1.0,
                 max_pirls_iter: int = 200):
        self.design = design
        self.family = family
        self.y = np.asarray(y, dtype=float)
        self.weights = weights
        self.gamma = float(gamma)
        self.max_pirls_iter = max_pirls_iter
        self._embedded = [
            design.embedded_penalty(sid) for sid, _, _ in design.penalties
        ]

    @property
    def n_slots(self) -> int:
        return len(self._embedded)

    def pirls(self, lam) -> PirlsResult:
        return pirls(
            self.design.X, self._embedded, lam, self.family, self.y,
            offset=self.design.offset, weights=self.weights,
            max_iter=self.max_pirls_iter,
        )

    def total_edf(self, result: PirlsResult) -> float:
        F = np.linalg.solve(result.H, result.XtWX)
        return float(np.trace(F))

    def gcv_score(self, log_lam) -> float:
        """GCV of the converged working fit at ``exp(log_lam)``.

        Infeasible points (PIRLS failure, non-convergence, a singular
        penalized Hessian, EDF >= n) return the sentinel maximum rather
        than raising.
        """
        lam = np.exp(np.asarray(log_lam, dtype=float))
        try:
            res = self.pirls(lam)
        except FitError:
            return GCV_MAX
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return GCV_MAX
        if not res.converged:
            return GCV_MAX
        n = self.design.n
        offset = self.design.offset
        eta0 = res.eta if offset is None else res.eta - offset
        work_dev = float(np.sum(res.w * (res.z - eta0) ** 2))
        try:
            edf = self.total_edf(res)
        except np.linalg.LinAlgError:
            return GCV_MAX
        denom = n - self.gamma * edf
        if denom <= 0 or not np.isfinite(work_dev):
            return GCV_MAX
        return n * work_dev / denom ** 2

    def optimize_lambda(self):
        """Coarse coordinate-wise grid search then Nelder-Mead refinement.

        Returns ``(lambda_hat, trace)`` with the trace recording every
        evaluation as (stage, log-lambda list, score).
        """
        L = self.n_slots
        if L == 0:
            return np.empty(0), []
        trace = []

        def score(x, stage):
            s = self.gcv_score(x)
            trace.append((stage, [float(v) for v in x], float(s)))
            return s

        grid = np.log(10.0) * np.arange(-6.0, 7.0, 2.0)
        cur = np.zeros(L)
        cur_score = score(cur, "grid")
        for _sweep in range(2):
            for j in range(L):
                for g in grid:
                    cand = cur.copy()
                    cand[j] = g
                    s = score(cand, "grid")
                    if s < cur_score:
                        cur_score = s
                        cur = cand
        if cur_score >= GCV_MAX:
            raise FitError(
                "no feasible smoothing parameters found on the search grid; "
                "consider reducing the basis dimensions (k)"
            )
        simplex = np.vstack([cur] + [cur + 0.5 * np.eye(L)[j] for j in range(L)])
        res = minimize(
            lambda x: score(x, "nelder-mead"), cur, method="Nelder-Mead",
            options={
                "initial_simplex": simplex, "fatol": 1e-7, "xatol": 1e-6,
                "maxfev": 500, "maxiter": 10 ** 6,
            },
        )
        best = res.x if res.fun <= cur_score else cur
        return np.exp(np.asarray(best, dtype=float)), trace


def estimate_scale(family: Family, y, result: PirlsResult, edf_total: float,
                   weights=None) -> float:
    """Pearson scale estimate for the Gaussian family; 1 for fixed-scale ones."""
    if family.fixed_scale:
        return 1.0
    y = np.asarray(y, dtype=float)
    wts = np.ones(y.size) if weights is None else np.asarray(weights, dtype=float)
    n = y.size
    if n - edf_total <= 0:
        raise FitError("residual degrees of freedom are not positive")
    pearson = float(np.sum(wts * (y - result.mu) ** 2 / family.variance(result.mu)))
    return pearson / (n - edf_total)


def _nb_objective(design: AssembledDesign, y, kappa: float, options: FitOptions):
    """Deviance-information score for one dispersion probe: lambda is
    re-optimized, then -2*loglik + 2*EDF + 2 (the +2 charges kappa itself)."""
    family = NegativeBinomial(kappa)
    glm = PenalizedGLM(design, family, y, gamma=options.gamma,
                       max_pirls_iter=options.max_pirls_iter)
    if options.lambda_fixed is not None:
        lam = np.asarray(options.lambda_fixed, dtype=float)
    else:
        lam, _ = glm.optimize_lambda()
    res = glm.pirls(lam)
    if not res.converged:
        raise FitError(f"PIRLS did not converge at kappa={kappa:g}")
    edf = glm.total_edf(res)
    obj = -2.0 * family.loglik(y, res.mu) + 2.0 * edf + 2.0
    return obj, lam


def estimate_nb_kappa(design: AssembledDesign, y, options: FitOptions):
    """Golden-section search on log kappa in [log 1e-4, log 1e2].

    Returns (kappa_hat, trace, notes); the trace records every probe as
    (log_kappa, objective) with the bracket endpoints evaluated first.
    """
    trace = []
    notes = []

    def f(logk):
        obj, _ = _nb_objective(design, y, math.exp(logk), options)
        trace.append((float(logk), float(obj)))
        return obj

    a, b = _LOG_KAPPA_LO, _LOG_KAPPA_HI
    f(a)
    f(b)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 1e-3:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    log_kappa = 0.5 * (a + b)
    if log_kappa - _LOG_KAPPA_LO < 1e-2:
        notes.append(
            "kappa estimate is at the lower search boundary (the response "
            "looks Poisson)"
        )
    elif _LOG_KAPPA_HI - log_kappa < 1e-2:
        notes.append("kappa estimate is at the upper search boundary")
    return math.exp(log_kappa), trace, notes


@dataclass
class FittedModel:
    """Everything needed for inference, prediction and serialization."""

    formula: str
    response: str
    family_name: str
    kappa: float | None
    kappa_estimated: bool
    intercept: bool
    linear_vars: tuple
    offset_var: str | None
    blocks: list
    spans: dict
    labels: list           # span order: intercept, linear..., blocks...
    slot_labels: list
    beta: np.ndarray
    log_lambda: np.ndarray
    phi: float
    deviance: float
    aic: float
    edf_total: float
    edf_terms: dict
    vcov: np.ndarray
    n_obs: int
    converged: bool
    pirls_iterations: int
    ridge_used: bool
    gamma: float
    seed: int | None
    schema_hash: str
    lambda_trace: list = field(default_factory=list)
    kappa_trace: list | None = None
    notes: list = field(default_factory=list)
    # fitting-time arrays; absent on models reloaded from disk
    H: np.ndarray | None = None
    XtWX: np.ndarray | None = None
    X: np.ndarray | None = None
    y: np.ndarray | None = None
    w: np.ndarray | None = None
    z: np.ndarray | None = None
    eta: np.ndarray | None = None
    offset_values: np.ndarray | None = None
    penalty_total: np.ndarray | None = None

    @property
    def family(self) -> Family:
        return family_from_name(self.family_name, self.kappa)

    def term_block(self, label: str):
        for b in self.blocks:
            if b.label == label:
                return b
        raise ValidationError(f"unknown term label {label!r}")


def penalized_score_residual(fit: FittedModel) -> float:
    """Relative sup-norm of the penalized working normal equations at the
    solution; small values certify convergence."""
    if fit.X is None:
        raise ValidationError("score residual needs the fitting arrays")
    eta0 = fit.eta if fit.offset_values is None else fit.eta - fit.offset_values
    g = fit.X.T @ (fit.w * (fit.z - eta0)) - fit.penalty_total @ fit.beta
    scale = 1.0 + np.abs(fit.X.T @ (fit.w * fit.z)).max()
    return float(np.abs(g).max() / scale)


def _drop_missing_rows(dataset: Dataset, used: set):
    bad = np.zeros(dataset.n, dtype=bool)
    for name in used:
        if name in dataset.scalars:
            bad |= ~np.isfinite(dataset.scalars[name])
    if bad.any():
        logger.info("dropping %d row(s) with missing scalar values", int(bad.sum()))
        return dataset.take(~bad)
    return dataset


def fit(dataset: Dataset, formula_text: str, family="gaussian",
        options: FitOptions | None = None) -> FittedModel:
    """Parse, resolve, build, select smoothing parameters, and fit."""
    options = options or FitOptions()
    ast = parse(formula_text)
    response, offset_var, specs = resolve(ast, dataset)

    used = {response}
    if offset_var:
        used.add(offset_var)
    for s in specs:
        used.update(s.vars)
        if s.by is not None:
            used.add(s.by[1])
    dataset = _drop_missing_rows(dataset, used)
    if dataset.n == 0:
        raise ValidationError("no rows left after dropping missing values")

    y = dataset.scalar(response)
    if isinstance(family, str):
        family_obj = family_from_name(family, options.kappa)
    else:
        family_obj = family
    family_obj.validate_response(y)

    blocks = []
    linear = []
    for s in specs:
        if s.kind == "intercept":
            continue
        if s.kind == "linear":
            linear.append((s.vars[0], dataset.scalar(s.vars[0])))
        else:
            blocks.append(build_term(s, dataset))
    offset = dataset.scalar(offset_var) if offset_var else None
    design = assemble_model(blocks, intercept=True, linear=linear, offset=offset)

    kappa = None
    kappa_estimated = False
    kappa_trace = None
    notes = []
    if isinstance(family_obj, NegativeBinomial):
        if options.kappa is not None:
            kappa = float(options.kappa)
        else:
            kappa, kappa_trace, notes = estimate_nb_kappa(design, y, options)
            kappa_estimated = True
            family_obj = NegativeBinomial(kappa)

    glm = PenalizedGLM(design, family_obj, y, gamma=options.gamma,
                       max_pirls_iter=options.max_pirls_iter)
    if options.lambda_fixed is not None:
        lam = np.asarray(options.lambda_fixed, dtype=float)
        if lam.size != glm.n_slots:
            raise ValidationError(
                f"lambda_fixed has {lam.size} entries but the model has "
                f"{glm.n_slots} penalty slots"
            )
        lambda_trace = []
    else:
        lam, lambda_trace = glm.optimize_lambda()

    result = glm.pirls(lam)
    if not result.converged:
        raise FitError(
            f"PIRLS did not converge in {result.iterations} iterations "
            f"(penalized deviance {result.penalized_deviance:g})"
        )
    if result.ridge_used:
        notes = notes + [
            "ridge fallback was applied to an indefinite penalized Hessian"
        ]

    edf_terms, edf_total = edf_breakdown(result.H, result.XtWX, design.spans)
    phi = estimate_scale(family_obj, y, result, edf_total)
    c = scipy.linalg.cho_factor(result.H, lower=True)
    Hinv = scipy.linalg.cho_solve(c, np.eye(design.p))
    vcov = phi * 0.5 * (Hinv + Hinv.T)
    aic = result.deviance + 2.0 * edf_total + (2.0 if kappa_estimated else 0.0)

    # span-ordered labels for design reconstruction
    labels = sorted(design.spans, key=lambda l: design.spans[l][0])
    log_lambda = np.log(lam) if lam.size else np.empty(0)

    return FittedModel(
        formula=formula_text,
        response=response,
        family_name=family_obj.name,
        kappa=kappa,
        kappa_estimated=kappa_estimated,
        intercept=True,
        linear_vars=design.linear_vars,
        offset_var=offset_var,
        blocks=design.blocks,
        spans=design.spans,
        labels=labels,
        slot_labels=design.slot_labels,
        beta=result.beta,
        log_lambda=log_lambda,
        phi=phi,
        deviance=result.deviance,
        aic=aic,
        edf_total=edf_total,
        edf_terms=edf_terms,
        vcov=vcov,
        n_obs=design.n,
        converged=result.converged,
        pirls_iterations=result.iterations,
        ridge_used=result.ridge_used,
        gamma=options.gamma,
        seed=options.seed,
        schema_hash=dataset.schema.hash(),
        lambda_trace=lambda_trace,
        kappa_trace=kappa_trace,
        notes=notes,
        H=result.H,
        XtWX=result.XtWX,
        X=design.X,
        y=y,
        w=result.w,
        z=result.z,
        eta=result.eta,
        offset_values=design.offset,
        penalty_total=design.total_penalty(lam),
    )
