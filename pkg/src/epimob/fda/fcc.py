"""Leading mode of covariation between two paired sets of curves.

With centered coefficient matrices ``X`` (n x K) and ``Y`` (n x L) and L2 Gram
matrices ``Wx``, ``Wy``, the score covariance of weights ``u = Σ a_k B_k``
and ``v = Σ b_l C_l`` is ``aᵀ Wx XᵀY Wy b / (n - 1)``. Writing
``Wx = Lx Lxᵀ`` turns the unit-norm constraints into Euclidean ones, so the
leading singular pair of ``Lxᵀ XᵀY Ly / (n - 1)`` gives the weight functions.
When both sets coincide this is functional PCA.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import BasisMismatchError, EpimobError
from .basis import SmoothedCurve, common_domain, same_basis


@dataclass(frozen=True)
class FccResult:
    weight_r: SmoothedCurve
    weight_m: SmoothedCurve
    mean_r: SmoothedCurve
    mean_m: SmoothedCurve
    scores_r: np.ndarray
    scores_m: np.ndarray
    singular_value: float
    explained: float
    unit_ids: tuple

    def weight(self, which: str) -> SmoothedCurve:
        return {"r": self.weight_r, "m": self.weight_m}[which]

    def mean(self, which: str) -> SmoothedCurve:
        return {"r": self.mean_r, "m": self.mean_m}[which]


def _set_matrix(curves):
    basis = same_basis(curves)
    domain = common_domain(curves)
    for c in curves:
        if not np.allclose(c.domain, domain, atol=1e-9):
            raise EpimobError("curves in a set must share one domain")
    C = np.vstack([c.coef for c in curves])
    W = basis.gram(0, domain)
    return basis, domain, C, W


def first_fcc(set_r, set_m) -> FccResult:
    """First functional covariance component of paired curve sets.

    The sign is fixed so that the R-weight function has a non-negative
    integral; scores then have non-negative cross-covariance by construction.
    """
    set_r, set_m = list(set_r), list(set_m)
    if len(set_r) != len(set_m):
        raise EpimobError("curve sets must be paired")
    if len(set_r) < 3:
        raise EpimobError("at least 3 paired curves are needed")
    n = len(set_r)
    basis_r, dom_r, X, Wx = _set_matrix(set_r)
    basis_m, dom_m, Y, Wy = _set_matrix(set_m)
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    Lx = linalg.cholesky(Wx, lower=True)
    Ly = linalg.cholesky(Wy, lower=True)
    M = Lx.T @ Xc.T @ Yc @ Ly / (n - 1)
    U, s, Vt = np.linalg.svd(M)
    a = linalg.solve_triangular(Lx.T, U[:, 0], lower=False)
    b = linalg.solve_triangular(Ly.T, Vt[0], lower=False)
    if np.dot(basis_r.integrals(dom_r), a) < 0:
        a, b = -a, -b
    total = s.sum()
    explained = float(s[0] / total) if total > 0 else 0.0
    scores_r = Xc @ Wx @ a
    scores_m = Yc @ Wy @ b
    units = tuple(c.unit_id for c in set_r)
    return FccResult(
        weight_r=SmoothedCurve(basis_r, a, dom_r, "fcc_weight_r"),
        weight_m=SmoothedCurve(basis_m, b, dom_m, "fcc_weight_m"),
        mean_r=SmoothedCurve(basis_r, mx, dom_r, "mean_r"),
        mean_m=SmoothedCurve(basis_m, my, dom_m, "mean_m"),
        scores_r=scores_r,
        scores_m=scores_m,
        singular_value=float(s[0]),
        explained=explained,
        unit_ids=units,
    )


def project_fcc(curve: SmoothedCurve, fcc: FccResult, which: str = "r") -> SmoothedCurve:
    """Rank-one reconstruction ``mean + score * weight`` of a curve."""
    if which not in ("r", "m"):
        raise EpimobError("which must be 'r' or 'm'")
    weight, mean = fcc.weight(which), fcc.mean(which)
    if curve.basis != weight.basis:
        raise BasisMismatchError("curve and FCC weight use different bases")
    W = weight.basis.gram(0, weight.domain)
    score = (curve.coef - mean.coef) @ W @ weight.coef
    return SmoothedCurve(weight.basis, mean.coef + score * weight.coef, weight.domain, curve.unit_id)
