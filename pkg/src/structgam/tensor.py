"""Tensor-product designs and their per-margin penalty expansions.

Column ordering is lexicographic with the FIRST margin's index varying
slowest: for margins of widths (K, L) the column ``a*L + b`` holds
``B1[:, a] * B2[:, b]``.  Every downstream consumer (penalty embedding,
serialization, plotting grids) relies on this ordering.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ValidationError


def tensor_design(margin_designs) -> np.ndarray:
    """Row-wise Kronecker product of margin design matrices."""
    margins = [np.asarray(m, dtype=float) for m in margin_designs]
    if not margins:
        raise ValidationError("tensor_design needs at least one margin")
    n = margins[0].shape[0]
    for m in margins[1:]:
        if m.shape[0] != n:
            raise DimensionError(
                f"margin row counts differ: {n} vs {m.shape[0]}"
            )
    out = margins[0]
    for m in margins[1:]:
        out = (out[:, :, None] * m[:, None, :]).reshape(n, -1)
    return out


def tensor_penalties(margin_penalties) -> list[np.ndarray]:
    """Expand each margin penalty to the tensor coefficient space.

    For margins (S_1, ..., S_m) the j-th output is the Kronecker product
    with identities in every other slot, e.g. ``S_x (x) I_L`` and
    ``I_K (x) S_y`` for two margins.  Each expanded penalty keeps its own
    smoothing-parameter slot downstream.
    """
    mats = [np.asarray(S, dtype=float) for S in margin_penalties]
    for S in mats:
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValidationError("margin penalties must be square")
        if not np.allclose(S, S.T, atol=1e-10 * (1.0 + np.abs(S).max())):
            raise ValidationError("margin penalties must be symmetric")
    dims = [S.shape[0] for S in mats]
    out = []
    for j, Sj in enumerate(mats):
        expanded = np.ones((1, 1))
        for i, d in enumerate(dims):
            factor = Sj if i == j else np.eye(d)
            expanded = np.kron(expanded, factor)
        out.append(expanded)
    return out
