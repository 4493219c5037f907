"""Univariate smooth bases, their wiggliness penalties, and constraints.

Three basis kinds are supported:

* ``bspline-cubic`` -- cubic B-splines on an open knot vector, penalized by
  the integrated squared second derivative.
* ``cyclic-cubic``  -- periodic cubic B-splines whose value, first and second
  derivatives match at the period endpoints.
* ``random-effect`` -- a one-hot level indicator basis with an identity
  (ridge) penalty.

The penalty integral is evaluated exactly: the product of two second
derivatives of a cubic spline is piecewise quadratic, so a 3-point
Gauss-Legendre rule per inter-knot interval has no truncation error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import splev

from .errors import (
    DegenerateDataError,
    ExtrapolationError,
    IdentifiabilityError,
    ValidationError,
)

SPLINE_KINDS = ("bspline-cubic", "cyclic-cubic")
BASIS_KINDS = SPLINE_KINDS + ("random-effect",)

#: relative eigenvalue threshold used for PSD / nullity checks
PSD_TOL = 1e-10

_DEGREE = 3  # cubic


@dataclass(frozen=True)
class BasisSpec:
    """Declarative description of one univariate basis.

    ``k`` is the basis dimension; for ``random-effect`` it equals the number
    of factor levels and is filled in during formula resolution.
    """

    kind: str = "bspline-cubic"
    k: int = 10
    penalty_order: int = 2
    knot_rule: str = "quantile"

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ValidationError(f"unknown basis kind {self.kind!r}")
        if self.knot_rule not in ("quantile", "uniform"):
            raise ValidationError(f"unknown knot rule {self.knot_rule!r}")
        if self.kind in SPLINE_KINDS:
            if self.penalty_order != 2:
                raise ValidationError("spline penalty order is fixed at 2")
            if self.k < self.penalty_order + 2:
                raise ValidationError(
                    f"basis dimension k={self.k} too small; need at least "
                    f"{self.penalty_order + 2} so the penalty null space is a "
                    "proper subspace"
                )
        elif self.k < 1:
            raise ValidationError("random-effect basis needs at least one level")


@dataclass(frozen=True)
class KnotVector:
    """Support of a fitted basis.

    For spline kinds ``breaks`` holds the distinct breakpoints in covariate
    units: ``[lo, interior..., hi]`` for cubic (k-3 intervals), and k+1
    positions spanning one period for cyclic.  For random-effect bases the
    support is the tuple of factor ``levels`` instead.
    """

    breaks: tuple[float, ...] | None = None
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.breaks is not None:
            b = np.asarray(self.breaks, dtype=float)
            if b.ndim != 1 or b.size < 2:
                raise ValidationError("knot vector needs at least two breakpoints")
            if np.any(np.diff(b) < 0):
                raise ValidationError("knot breakpoints must be nondecreasing")

    @property
    def lo(self) -> float:
        return float(self.breaks[0])

    @property
    def hi(self) -> float:
        return float(self.breaks[-1])


@dataclass(frozen=True)
class PenaltyMatrix:
    """Symmetric PSD wiggliness penalty together with its nullity."""

    matrix: np.ndarray
    null_space_dim: int

    def __post_init__(self):
        S = np.asarray(self.matrix, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValidationError("penalty must be square")
        if not np.allclose(S, S.T, atol=1e-10 * (1.0 + np.abs(S).max())):
            raise ValidationError("penalty must be symmetric")


def place_knots(x, spec: BasisSpec) -> KnotVector:
    """Choose breakpoints for a spline basis from observed covariate values.

    The quantile rule puts interior knots at evenly spaced quantiles of the
    distinct values; the uniform rule spaces them evenly over the data range.
    Boundary knots sit at the data extremes.
    """
    if spec.kind == "random-effect":
        raise ValidationError("random-effect bases take levels, not knots")
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise DegenerateDataError("covariate has no finite values")
    distinct = np.unique(x)
    if distinct.size < 2:
        raise DegenerateDataError("covariate needs at least 2 distinct values")

    # cubic: k-4 interior knots; cyclic: k+1 breakpoints total (k-1 interior)
    n_interior = spec.k - 4 if spec.kind == "bspline-cubic" else spec.k - 1
    if distinct.size < n_interior + 2:
        raise DegenerateDataError(
            f"covariate has {distinct.size} distinct values but a "
            f"{spec.kind} basis with k={spec.k} needs at least {n_interior + 2}"
        )
    lo, hi = distinct[0], distinct[-1]
    if n_interior == 0:
        interior = np.empty(0)
    elif spec.knot_rule == "uniform":
        interior = lo + (hi - lo) * np.arange(1, n_interior + 1) / (n_interior + 1)
    else:
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        interior = np.quantile(distinct, probs)
    breaks = np.concatenate([[lo], interior, [hi]])
    if np.any(np.diff(breaks) <= 0):
        raise DegenerateDataError(
            "knot placement produced coincident breakpoints; reduce k or "
            "use the uniform rule"
        )
    return KnotVector(breaks=tuple(float(b) for b in breaks))


def _open_knots(breaks: np.ndarray) -> np.ndarray:
    """Full knot vector with boundary knots replicated to cubic order."""
    return np.concatenate(
        [np.repeat(breaks[0], _DEGREE), breaks, np.repeat(breaks[-1], _DEGREE)]
    )


def _cyclic_ext_knots(breaks: np.ndarray) -> np.ndarray:
    period = breaks[-1] - breaks[0]
    return np.concatenate(
        [breaks[-4:-1] - period, breaks, breaks[1:4] + period]
    )


def _bspline_columns(t: np.ndarray, n_basis: int, x: np.ndarray, deriv: int) -> np.ndarray:
    out = np.empty((x.size, n_basis))
    coef = np.zeros(n_basis)
    for j in range(n_basis):
        coef[j] = 1.0
        out[:, j] = splev(x, (t, coef, _DEGREE), der=deriv)
        coef[j] = 0.0
    return out


def eval_basis(spec: BasisSpec, knots: KnotVector, x, deriv: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative) at the points ``x``.

    Returns an ``m x k`` matrix whose row i is ``(b_1(x_i), ..., b_k(x_i))``.
    Non-cyclic evaluation outside the knot range raises ``ExtrapolationError``
    rather than clamping or extrapolating; cyclic arguments are reduced into
    the period first.
    """
    if spec.kind == "random-effect":
        codes = np.asarray(x)
        if codes.dtype.kind not in "iu":
            raise ValidationError("random-effect basis expects integer level codes")
        if codes.size and (codes.min() < 0 or codes.max() >= spec.k):
            raise ValidationError(
                f"level code out of range for a {spec.k}-level random effect"
            )
        out = np.zeros((codes.size, spec.k))
        out[np.arange(codes.size), codes] = 1.0
        return out

    x = np.asarray(x, dtype=float).ravel()
    breaks = np.asarray(knots.breaks, dtype=float)
    if spec.kind == "bspline-cubic":
        if x.size and (x.min() < breaks[0] or x.max() > breaks[-1]):
            bad = x[(x < breaks[0]) | (x > breaks[-1])]
            raise ExtrapolationError(
                f"{bad.size} value(s) outside the knot range "
                f"[{breaks[0]:g}, {breaks[-1]:g}] (e.g. {bad[0]:g})"
            )
        t = _open_knots(breaks)
        return _bspline_columns(t, spec.k, x, deriv)

    # cyclic: fold points into the period, evaluate an extended open basis,
    # then wrap the three leftmost columns onto the three rightmost.
    period = breaks[-1] - breaks[0]
    xm = breaks[0] + np.mod(x - breaks[0], period)
    t = _cyclic_ext_knots(breaks)
    ext = _bspline_columns(t, spec.k + 3, xm, deriv)
    out = ext[:, :spec.k].copy()
    out[:, :3] += ext[:, spec.k:]
    return out


def _quadrature_points(breaks: np.ndarray, n_nodes: int = 3):
    nodes, weights = leggauss(n_nodes)
    lo = breaks[:-1]
    length = np.diff(breaks)
    pts = (lo[:, None] + 0.5 * length[:, None] * (nodes[None, :] + 1.0)).ravel()
    wts = (0.5 * length[:, None] * weights[None, :]).ravel()
    return pts, wts


def penalty_matrix(spec: BasisSpec, knots: KnotVector | None) -> PenaltyMatrix:
    """Exact integrated-squared-second-derivative penalty for spline kinds.

    Random-effect bases get the identity penalty with an empty null space.
    """
    if spec.kind == "random-effect":
        return PenaltyMatrix(matrix=np.eye(spec.k), null_space_dim=0)
    breaks = np.asarray(knots.breaks, dtype=float)
    pts, wts = _quadrature_points(breaks)
    d2 = eval_basis(spec, knots, pts, deriv=2)
    S = (d2 * wts[:, None]).T @ d2
    S = 0.5 * (S + S.T)
    nullity = 2 if spec.kind == "bspline-cubic" else 1
    return PenaltyMatrix(matrix=S, null_space_dim=nullity)


def null_space_dim(S: np.ndarray, tol: float = PSD_TOL) -> int:
    """Count eigenvalues below ``tol * lambda_max`` (nullity of a PSD matrix)."""
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return 0
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    lam_max = max(ev.max(), 0.0)
    if lam_max == 0.0:
        return S.shape[0]
    return int(np.sum(ev < tol * lam_max))


def sum_to_zero_transform(column_sums: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the null space of a single linear constraint.

    Returns a ``k x (k-1)`` matrix ``Z`` with ``column_sums @ Z == 0``.
    """
    c = np.asarray(column_sums, dtype=float).reshape(-1, 1)
    k = c.shape[0]
    if not np.any(c):
        # constraint already vacuous; drop an arbitrary fixed direction
        return np.eye(k)[:, 1:]
    Q, _ = np.linalg.qr(c, mode="complete")
    return Q[:, 1:]


def center_constraint(B: np.ndarray, S: PenaltyMatrix, term: str | None = None,
                      check_rank: bool = True):
    """Absorb the sum-to-zero identifiability constraint into a basis.

    Reparameterizes by an orthonormal basis ``Z`` of the null space of
    ``1' B`` so the constrained design ``B Z`` has vanishing column sums and
    the transformed penalty ``Z' S Z`` stays symmetric PSD.  Returns
    ``(B Z, Z' S Z as PenaltyMatrix, Z)``.
    """
    B = np.asarray(B, dtype=float)
    Z = sum_to_zero_transform(B.sum(axis=0))
    BZ = B @ Z
    if check_rank and np.linalg.matrix_rank(BZ) < BZ.shape[1]:
        name = f" for term {term!r}" if term else ""
        raise IdentifiabilityError(
            f"design is rank deficient after the sum-to-zero constraint{name}; "
            "the covariate may be constant or k too large"
        )
    SZ = Z.T @ S.matrix @ Z
    SZ = 0.5 * (SZ + SZ.T)
    nullity = null_space_dim(SZ)
    return BZ, PenaltyMatrix(matrix=SZ, null_space_dim=nullity), Z
