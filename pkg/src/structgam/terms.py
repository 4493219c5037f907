"""Realize model terms as design blocks.

Each smooth or tensor term becomes a :class:`DesignBlock`: realized design
columns plus the per-margin penalty list, the constraint transform used for
identifiability, and the margin metadata needed to rebuild rows for new data.

The matrix-argument constructions all follow the same summation rule: the
smooth is evaluated cell-wise over an n x T matrix pair and summed over
columns, which is what lets a whole covariate series enter the linear
predictor as a single term.

Centering policy: plain smooths, scalar tensor smooths and each level of a
factor-by smooth are sum-to-zero centered so they are identifiable next to an
intercept; numeric-by and matrix-argument terms are not centered because the
multiplier already breaks the confound with the intercept.  The lag tensor
term is the exception: its post-summation design contains an intercept-like
direction, so a single sum-to-zero constraint is applied after the column
sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .bases import (
    BasisSpec,
    KnotVector,
    PenaltyMatrix,
    center_constraint,
    eval_basis,
    null_space_dim,
    penalty_matrix,
    place_knots,
    sum_to_zero_transform,
)
from .data import Dataset
from .errors import (
    DimensionError,
    IdentifiabilityError,
    LagSpacingWarning,
    ValidationError,
)


@dataclass(frozen=True)
class TermSpec:
    """One resolved model term.

    ``by`` is ``None`` or a ``(kind, column)`` pair with kind in
    ``numeric | binary | factor | matrix``.  ``weights`` optionally scales
    each matrix column of a summed matrix-argument smooth (e.g. quadrature
    spacing for a non-uniform index grid); the default is a plain sum.
    """

    kind: str  # intercept | linear | offset | smooth | tensor
    vars: tuple[str, ...] = ()
    bases: tuple[BasisSpec, ...] = ()
    by: tuple[str, str] | None = None
    center: bool = True
    label: str = ""
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("intercept", "linear", "offset", "smooth", "tensor"):
            raise ValidationError(f"unknown term kind {self.kind!r}")
        if self.by is not None and self.by[0] not in (
            "numeric", "binary", "factor", "matrix",
        ):
            raise ValidationError(f"unknown by kind {self.by[0]!r}")


@dataclass(frozen=True)
class Margin:
    """One univariate margin of a smooth: covariate name, basis, knots."""

    var: str
    spec: BasisSpec
    knots: KnotVector


@dataclass
class DesignBlock:
    """Realized design columns for one term plus its penalties and recipe."""

    label: str
    term_type: str  # smooth | tensor | random_effect | vcm | factor_smooth | sofr | dlm
    margins: tuple[Margin, ...]
    penalties: list  # list of np.ndarray, one per smoothing-parameter slot
    null_space_dim: int
    X: np.ndarray | None = None
    Z: np.ndarray | None = None
    by_kind: str | None = None
    by_var: str | None = None
    by_levels: tuple[str, ...] | None = None
    level_transforms: list | None = None  # factor smooth: one Z per level
    weights: tuple[float, ...] | None = None
    slots: list | None = None  # global lambda slot ids, assigned at assembly

    @property
    def p(self) -> int:
        return self.penalties[0].shape[0]

    def evaluate(self, data: Dataset) -> np.ndarray:
        """Rebuild design rows for (new) data using the stored recipe."""
        return _raw_rows(self, data)


# ---------------------------------------------------------------------------
# row construction shared by fitting and prediction


def _factor_codes(data: Dataset, var: str, levels: tuple[str, ...]) -> np.ndarray:
    codes, data_levels = data.factor(var)
    if data_levels == levels:
        return codes
    lookup = {lab: i for i, lab in enumerate(levels)}
    out = np.empty(codes.shape, dtype=int)
    for i, c in enumerate(codes):
        lab = data_levels[c]
        if lab not in lookup:
            raise ValidationError(
                f"factor {var!r} has unseen level {lab!r}; known levels are "
                f"{list(levels)}"
            )
        out[i] = lookup[lab]
    return out


def _margin_values(block: DesignBlock, margin: Margin, data: Dataset):
    if margin.spec.kind == "random-effect":
        return _factor_codes(data, margin.var, margin.knots.levels)
    return data.scalar(margin.var)


def _rowwise_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def _raw_rows(block: DesignBlock, data: Dataset) -> np.ndarray:
    """Design rows in the block's final (possibly constrained) coordinates."""
    tt = block.term_type
    if tt in ("smooth", "random_effect"):
        m = block.margins[0]
        B = eval_basis(m.spec, m.knots, _margin_values(block, m, data))
        return B @ block.Z if block.Z is not None else B

    if tt == "vcm":
        m = block.margins[0]
        B = eval_basis(m.spec, m.knots, data.scalar(m.var))
        by = data.scalar(block.by_var)
        if block.by_kind == "binary":
            _check_binary(by, block.by_var)
        return B * by[:, None]

    if tt == "factor_smooth":
        m = block.margins[0]
        B = eval_basis(m.spec, m.knots, data.scalar(m.var))
        codes = _factor_codes(data, block.by_var, block.by_levels)
        parts = []
        for f, Zf in enumerate(block.level_transforms):
            ind = (codes == f).astype(float)
            parts.append((B * ind[:, None]) @ Zf)
        return np.hstack(parts)

    if tt == "tensor":
        Bs = [
            eval_basis(m.spec, m.knots, data.scalar(m.var)) for m in block.margins
        ]
        T = Bs[0]
        for B in Bs[1:]:
            T = _rowwise_kron(T, B)
        return T @ block.Z if block.Z is not None else T

    if tt == "sofr":
        m = block.margins[0]
        V = data.matrix(m.var)
        X = data.matrix(block.by_var)
        if V.shape != X.shape:
            raise DimensionError(
                f"matrix columns {m.var!r} and {block.by_var!r} must be of "
                f"the same size, got {V.shape} and {X.shape}"
            )
        n, T = V.shape
        B = eval_basis(m.spec, m.knots, V.ravel()).reshape(n, T, -1)
        w = np.ones(T) if block.weights is None else np.asarray(block.weights)
        rows = np.einsum("it,itk->ik", X * w[None, :], B)
        return rows

    if tt == "dlm":
        mx, ml = block.margins
        X = data.matrix(mx.var)
        L = data.matrix(ml.var)
        if X.shape != L.shape:
            raise DimensionError(
                f"matrix columns {mx.var!r} and {ml.var!r} must be of the "
                f"same size, got {X.shape} and {L.shape}"
            )
        n, T = X.shape
        cells = _rowwise_kron(
            eval_basis(mx.spec, mx.knots, X.ravel()),
            eval_basis(ml.spec, ml.knots, L.ravel()),
        ).reshape(n, T, -1)
        rows = cells.sum(axis=1)
        return rows @ block.Z if block.Z is not None else rows

    raise ValidationError(f"unknown term type {tt!r}")


def _check_binary(values: np.ndarray, name: str) -> None:
    if not np.all(np.isin(values, (0.0, 1.0))):
        bad = values[~np.isin(values, (0.0, 1.0))]
        raise ValidationError(
            f"by-column {name!r} declared binary but contains {bad[0]!r}"
        )


# ---------------------------------------------------------------------------
# builders


def _spline_margin(var: str, spec: BasisSpec, data: Dataset) -> Margin:
    return Margin(var=var, spec=spec, knots=place_knots(data.scalar(var), spec))


def build_plain_smooth(spec: TermSpec, data: Dataset) -> DesignBlock:
    """Univariate smooth of a scalar covariate (optionally a random effect)."""
    basis = spec.bases[0]
    if basis.kind == "random-effect":
        codes, levels = data.factor(spec.vars[0])
        basis = BasisSpec(kind="random-effect", k=len(levels))
        margin = Margin(spec.vars[0], basis, KnotVector(levels=levels))
        block = DesignBlock(
            label=spec.label, term_type="random_effect", margins=(margin,),
            penalties=[np.eye(basis.k)], null_space_dim=0,
        )
        block.X = _raw_rows(block, data)
        return block

    margin = _spline_margin(spec.vars[0], basis, data)
    B = eval_basis(basis, margin.knots, data.scalar(spec.vars[0]))
    S = penalty_matrix(basis, margin.knots)
    if spec.center:
        BZ, SZ, Z = center_constraint(B, S, term=spec.label)
        block = DesignBlock(
            label=spec.label, term_type="smooth", margins=(margin,),
            penalties=[SZ.matrix], null_space_dim=SZ.null_space_dim, Z=Z,
        )
        block.X = BZ
    else:
        if np.linalg.matrix_rank(B) < B.shape[1]:
            raise IdentifiabilityError(
                f"design for term {spec.label!r} is rank deficient"
            )
        block = DesignBlock(
            label=spec.label, term_type="smooth", margins=(margin,),
            penalties=[S.matrix], null_space_dim=S.null_space_dim,
        )
        block.X = B
    return block


def build_by_smooth(spec: TermSpec, data: Dataset) -> DesignBlock:
    """Smooth premultiplied by a scalar: varying coefficient, on/off gate,
    or one duplicated (and centered) smooth per factor level."""
    by_kind, by_var = spec.by
    basis = spec.bases[0]
    margin = _spline_margin(spec.vars[0], basis, data)
    B = eval_basis(basis, margin.knots, data.scalar(spec.vars[0]))
    S = penalty_matrix(basis, margin.knots)

    if by_kind in ("numeric", "binary"):
        by = data.scalar(by_var)
        if by_kind == "binary":
            _check_binary(by, by_var)
        block = DesignBlock(
            label=spec.label, term_type="vcm", margins=(margin,),
            penalties=[S.matrix], null_space_dim=S.null_space_dim,
            by_kind=by_kind, by_var=by_var,
        )
        block.X = B * by[:, None]
        return block

    if by_kind != "factor":
        raise ValidationError(f"build_by_smooth cannot handle by kind {by_kind!r}")
    codes, levels = data.factor(by_var)
    if len(levels) < 2:
        raise ValidationError(
            f"factor by-column {by_var!r} needs at least 2 levels"
        )
    parts, transforms, pens = [], [], []
    for f in range(len(levels)):
        ind = (codes == f).astype(float)
        Bf = B * ind[:, None]
        BZf, SZf, Zf = center_constraint(Bf, S, term=f"{spec.label}[{levels[f]}]")
        parts.append(BZf)
        transforms.append(Zf)
        pens.append(SZf.matrix)
    # one shared smoothing parameter across levels: block-diagonal penalty
    pen = scipy.linalg.block_diag(*pens)
    block = DesignBlock(
        label=spec.label, term_type="factor_smooth", margins=(margin,),
        penalties=[pen], null_space_dim=null_space_dim(pen),
        by_kind="factor", by_var=by_var, by_levels=levels,
        level_transforms=transforms,
    )
    block.X = np.hstack(parts)
    return block


def build_sofr(spec: TermSpec, data: Dataset) -> DesignBlock:
    """Weighted-sum smooth of a functional covariate: the smooth of the index
    matrix is evaluated cell-wise, scaled by the covariate matrix, and summed
    over columns."""
    by_var = spec.by[1]
    V = data.matrix(spec.vars[0])
    X = data.matrix(by_var)
    if V.shape != X.shape:
        raise DimensionError(
            f"matrix columns {spec.vars[0]!r} and {by_var!r} must be of the "
            f"same size, got {V.shape} and {X.shape}"
        )
    if spec.weights is not None and len(spec.weights) != V.shape[1]:
        raise DimensionError(
            f"column weights length {len(spec.weights)} != width {V.shape[1]}"
        )
    basis = spec.bases[0]
    margin = Margin(spec.vars[0], basis, place_knots(V.ravel(), basis))
    S = penalty_matrix(basis, margin.knots)
    block = DesignBlock(
        label=spec.label, term_type="sofr", margins=(margin,),
        penalties=[S.matrix], null_space_dim=S.null_space_dim,
        by_kind="matrix", by_var=by_var, weights=spec.weights,
    )
    block.X = _raw_rows(block, data)
    return block


def _orthonormal_complement(directions: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal basis of the complement of span(directions) in R^k."""
    if directions.size == 0:
        return np.eye(k)
    U, s, _ = np.linalg.svd(directions, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * (s[0] if s.size else 1.0)))
    if rank == 0:
        return np.eye(k)
    basis = U[:, :rank]
    Q, _ = np.linalg.qr(np.hstack([basis, np.eye(k)]))
    return Q[:, rank:]


def raw_summed_design(block: DesignBlock, data: Dataset) -> np.ndarray:
    """A summed matrix term's design before its identifiability constraint."""
    if block.Z is None:
        return _raw_rows(block, data)
    probe = DesignBlock(
        label=block.label, term_type=block.term_type, margins=block.margins,
        penalties=block.penalties, null_space_dim=block.null_space_dim,
        by_kind=block.by_kind, by_var=block.by_var, weights=block.weights,
    )
    return _raw_rows(probe, data)


def build_dlm(spec: TermSpec, data: Dataset) -> DesignBlock:
    """Summed tensor smooth of a covariate matrix and its lag-index matrix."""
    from .tensor import tensor_penalties

    xvar, lvar = spec.vars
    X = data.matrix(xvar)
    L = data.matrix(lvar)
    if X.shape != L.shape:
        raise DimensionError(
            f"matrix columns {xvar!r} and {lvar!r} must be of the same size, "
            f"got {X.shape} and {L.shape}"
        )
    steps = np.diff(L, axis=1)
    if steps.size and (np.max(steps) - np.min(steps)) > 1e-8 * max(
        1.0, np.max(np.abs(steps))
    ):
        warnings.warn(
            f"lag column {lvar!r} has unequal steps; the lag-margin penalty "
            "assumes an evenly spaced index",
            LagSpacingWarning,
            stacklevel=2,
        )
    bx, bl = spec.bases
    mx = Margin(xvar, bx, place_knots(X.ravel(), bx))
    ml = Margin(lvar, bl, place_knots(L.ravel(), bl))
    Sx = penalty_matrix(bx, mx.knots).matrix
    Sl = penalty_matrix(bl, ml.knots).matrix
    expanded = tensor_penalties([Sx, Sl])

    probe = DesignBlock(
        label=spec.label, term_type="dlm", margins=(mx, ml),
        penalties=expanded, null_space_dim=0,
    )
    raw = _raw_rows(probe, data)

    # Constrain away (a) the intercept confound (sum-to-zero over the summed
    # design) and (b) coefficient directions invisible to both the data and
    # every margin penalty.  With a lag vector shared across rows, surfaces
    # affine in the lag and constant in x sum to exactly zero while carrying
    # zero penalty, which would make the penalized Hessian singular at any
    # lambda.
    c = raw.sum(axis=0)
    scale = [max(np.abs(M).max(), 1e-300) for M in (raw, *expanded)]
    stacked = np.vstack([raw / scale[0]] +
                        [S / s for S, s in zip(expanded, scale[1:])])
    _, sv, Vt = np.linalg.svd(stacked, full_matrices=True)
    tol = 1e-10 * (sv[0] if sv.size else 1.0)
    invisible = Vt[np.concatenate([sv, np.zeros(Vt.shape[0] - sv.size)]) <= tol].T
    cn = np.linalg.norm(c)
    remove = invisible if cn < 1e-300 else np.hstack(
        [c[:, None] / cn, invisible])
    Z = _orthonormal_complement(remove, raw.shape[1])

    pens = [0.5 * ((Z.T @ S @ Z) + (Z.T @ S @ Z).T) for S in expanded]
    joint = sum(P / max(np.abs(P).max(), 1e-300) for P in pens)
    block = DesignBlock(
        label=spec.label, term_type="dlm", margins=(mx, ml),
        penalties=pens, null_space_dim=null_space_dim(joint), Z=Z,
    )
    block.X = raw @ Z
    return block


def build_tensor_smooth(spec: TermSpec, data: Dataset) -> DesignBlock:
    """Plain tensor-product smooth of scalar covariates."""
    from .tensor import tensor_design, tensor_penalties

    margins = tuple(
        _spline_margin(v, b, data) for v, b in zip(spec.vars, spec.bases)
    )
    Bs = [eval_basis(m.spec, m.knots, data.scalar(m.var)) for m in margins]
    Ss = [penalty_matrix(m.spec, m.knots).matrix for m in margins]
    T = tensor_design(Bs)
    expanded = tensor_penalties(Ss)
    if spec.center:
        Z = sum_to_zero_transform(T.sum(axis=0))
        TZ = T @ Z
        if np.linalg.matrix_rank(TZ) < TZ.shape[1]:
            raise IdentifiabilityError(
                f"design for term {spec.label!r} is rank deficient after the "
                "sum-to-zero constraint"
            )
        pens = [0.5 * ((Z.T @ S @ Z) + (Z.T @ S @ Z).T) for S in expanded]
        joint = sum(P / max(np.abs(P).max(), 1e-300) for P in pens)
        block = DesignBlock(
            label=spec.label, term_type="tensor", margins=margins,
            penalties=pens, null_space_dim=null_space_dim(joint), Z=Z,
        )
        block.X = TZ
    else:
        joint = sum(P / max(np.abs(P).max(), 1e-300) for P in expanded)
        block = DesignBlock(
            label=spec.label, term_type="tensor", margins=margins,
            penalties=expanded, null_space_dim=null_space_dim(joint),
        )
        block.X = T
    return block


def build_term(spec: TermSpec, data: Dataset) -> DesignBlock:
    """Dispatch a smooth/tensor TermSpec to its builder."""
    if spec.kind == "smooth":
        if spec.by is None:
            return build_plain_smooth(spec, data)
        if spec.by[0] == "matrix":
            return build_sofr(spec, data)
        return build_by_smooth(spec, data)
    if spec.kind == "tensor":
        info = data.column_info()
        roles = [info[v][0] for v in spec.vars]
        if all(r == "matrix" for r in roles):
            return build_dlm(spec, data)
        return build_tensor_smooth(spec, data)
    raise ValidationError(f"build_term cannot realize kind {spec.kind!r}")


def rebuild_block_penalties(block: DesignBlock) -> None:
    """Recompute penalty matrices from a deserialized block recipe."""
    from .tensor import tensor_penalties

    tt = block.term_type
    if tt == "random_effect":
        block.penalties = [np.eye(block.margins[0].spec.k)]
        return
    mats = [penalty_matrix(m.spec, m.knots).matrix for m in block.margins]
    if tt in ("smooth", "vcm", "sofr"):
        S = mats[0]
        if block.Z is not None:
            S = block.Z.T @ S @ block.Z
            S = 0.5 * (S + S.T)
        block.penalties = [S]
    elif tt == "factor_smooth":
        pens = []
        for Zf in block.level_transforms:
            Sf = Zf.T @ mats[0] @ Zf
            pens.append(0.5 * (Sf + Sf.T))
        block.penalties = [scipy.linalg.block_diag(*pens)]
    elif tt in ("tensor", "dlm"):
        expanded = tensor_penalties(mats)
        if block.Z is not None:
            expanded = [
                0.5 * ((block.Z.T @ S @ block.Z) + (block.Z.T @ S @ block.Z).T)
                for S in expanded
            ]
        block.penalties = expanded
    else:
        raise ValidationError(f"cannot rebuild penalties for {tt!r}")


# ---------------------------------------------------------------------------
# model assembly


@dataclass
class AssembledDesign:
    """Concatenated design plus the penalty registry and column spans."""

    X: np.ndarray
    offset: np.ndarray | None
    intercept: bool
    linear_vars: tuple[str, ...]
    blocks: list
    spans: dict  # label -> (start, stop)
    penalties: list  # (slot_id, start, block-local matrix)
    slot_labels: list
    _embedded: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def embedded_penalty(self, slot: int) -> np.ndarray:
        """Zero-padded p x p penalty for one smoothing-parameter slot."""
        if not self._embedded:
            for _sid, start, S in self.penalties:
                full = np.zeros((self.p, self.p))
                full[start:start + S.shape[0], start:start + S.shape[0]] = S
                self._embedded.append(full)
        return self._embedded[slot]

    def total_penalty(self, lam: np.ndarray) -> np.ndarray:
        P = np.zeros((self.p, self.p))
        for sid, start, S in self.penalties:
            e = start + S.shape[0]
            P[start:e, start:e] += lam[sid] * S
        return P


def assemble_model(blocks, intercept: bool, linear=(), offset=None) -> AssembledDesign:
    """Concatenate intercept, linear columns and term blocks; register
    penalties at their embedded offsets.  The offset is kept separate and is
    never penalized or estimated."""
    labels = []
    cols = []
    spans = {}
    pos = 0
    n = None

    def push(label, mat):
        nonlocal pos, n
        if label in spans:
            raise ValidationError(f"duplicate term label {label!r}")
        if n is None:
            n = mat.shape[0]
        elif mat.shape[0] != n:
            raise DimensionError(
                f"term {label!r} has {mat.shape[0]} rows, expected {n}"
            )
        cols.append(mat)
        spans[label] = (pos, pos + mat.shape[1])
        labels.append(label)
        pos += mat.shape[1]

    if intercept:
        first = blocks[0].X if blocks else None
        nrow = (
            first.shape[0]
            if first is not None
            else (len(linear[0][1]) if linear else (len(offset) if offset is not None else 0))
        )
        push("intercept", np.ones((nrow, 1)))
    for name, values in linear:
        push(name, np.asarray(values, dtype=float).reshape(-1, 1))
    penalties = []
    slot_labels = []
    for block in blocks:
        start = pos
        push(block.label, block.X)
        block.slots = []
        for j, S in enumerate(block.penalties):
            sid = len(penalties)
            suffix = f":{block.margins[j].var}" if len(block.penalties) > 1 else ""
            penalties.append((sid, start, S))
            slot_labels.append(f"{block.label}{suffix}")
            block.slots.append(sid)
    X = np.hstack(cols) if cols else np.zeros((0, 0))
    if offset is not None:
        offset = np.asarray(offset, dtype=float)
        if offset.shape[0] != X.shape[0]:
            raise DimensionError("offset length does not match design rows")
    return AssembledDesign(
        X=X, offset=offset, intercept=intercept,
        linear_vars=tuple(name for name, _ in linear),
        blocks=list(blocks), spans=spans, penalties=penalties,
        slot_labels=slot_labels,
    )
