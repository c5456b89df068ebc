"""Roughness-penalized least-squares smoothing and GCV selection of λ.

The fit minimizes ``Σ (y_i - f(t_i))² + λ ∫ f''(t)² dt``. It is solved as an
augmented least-squares problem ``[B; sqrt(λ) D] c ≈ [y; 0]`` with
``DᵀD = P`` (the exact second-derivative Gram matrix) through an SVD, which
stays accurate for very large λ and yields the hat-matrix trace directly.
"""
from __future__ import annotations

import datetime as dt
import logging

import numpy as np

from ..errors import EpimobError, RankDeficientError
from ..series import DailySeries
from .basis import BSplineBasis, SmoothedCurve

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = np.logspace(-2, 6, 33)


def series_points(series: DailySeries, origin: dt.date | None = None):
    """Day offsets (from ``origin``) and values of the non-missing days."""
    origin = origin or series.start_date
    offset = (series.start_date - origin).days
    t = offset + np.arange(len(series), dtype=float)
    keep = ~np.isnan(series.values)
    return t[keep], np.asarray(series.values[keep], dtype=float)


def penalty_root(basis: BSplineBasis, deriv: int = 2) -> np.ndarray:
    """Matrix ``D`` with ``DᵀD`` equal to the roughness Gram matrix."""
    P = basis.gram(deriv)
    w, V = np.linalg.eigh((P + P.T) / 2)
    w = np.clip(w, 0.0, None)
    return np.sqrt(w)[:, None] * V.T


class _PenalizedSystem:
    """SVD of the augmented design for one set of sample times and one λ."""

    def __init__(self, B, D, lam):
        if lam < 0:
            raise EpimobError("lambda must be >= 0")
        self.n = B.shape[0]
        A = np.vstack([B, np.sqrt(lam) * D])
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        if s[-1] <= 1e-10 * s[0]:
            raise RankDeficientError(
                f"penalized system is singular ({self.n} points, {B.shape[1]} basis functions, λ={lam:g})"
            )
        self.U1 = U[: self.n]
        self.s = s
        self.Vt = Vt

    def coef(self, y):
        return self.Vt.T @ ((self.U1.T @ y) / self.s)

    def fitted(self, y):
        return self.U1 @ (self.U1.T @ y)

    @property
    def trace(self) -> float:
        return float(np.sum(self.U1**2))

    def leverages(self) -> np.ndarray:
        return np.sum(self.U1**2, axis=1)


def penalized_smooth(series, basis: BSplineBasis, lam: float, origin=None, unit_id=None) -> SmoothedCurve:
    """Fit a roughness-penalized B-spline curve to a series.

    Parameters
    ----------
    series : DailySeries or tuple (t, y)
        Missing days of a DailySeries are skipped.
    basis : BSplineBasis
    lam : float
        Weight of the integrated squared second derivative.
    origin : datetime.date, optional
        Day 0 of the time axis for DailySeries input.
    """
    if isinstance(series, DailySeries):
        t, y = series_points(series, origin)
        unit_id = series.unit_id if unit_id is None else unit_id
    else:
        t, y = (np.asarray(v, dtype=float) for v in series)
    if len(t) < basis.n_basis:
        raise RankDeficientError(f"{len(t)} points cannot determine {basis.n_basis} coefficients")
    system = _PenalizedSystem(basis.evaluate(t), penalty_root(basis), lam)
    return SmoothedCurve(basis, system.coef(y), basis.domain, unit_id or "")


def gcv_scores(serieses, basis: BSplineBasis, lambda_grid=DEFAULT_LAMBDA_GRID, origin=None) -> np.ndarray:
    """Matrix of GCV(λ) = n SSE / (n - tr H)², shape (n_curves, n_lambdas).

    Entries where the smoother uses all degrees of freedom are NaN.
    """
    points = [series_points(s, origin) if isinstance(s, DailySeries) else tuple(map(np.asarray, s)) for s in serieses]
    D = penalty_root(basis)
    scores = np.full((len(points), len(lambda_grid)), np.nan)
    # curves observed at identical times share one decomposition
    groups: dict[bytes, list[int]] = {}
    for i, (t, _) in enumerate(points):
        groups.setdefault(np.asarray(t, float).tobytes(), []).append(i)
    for members in groups.values():
        t = np.asarray(points[members[0]][0], dtype=float)
        B = basis.evaluate(t)
        Y = np.column_stack([points[i][1] for i in members])
        n = len(t)
        for j, lam in enumerate(lambda_grid):
            try:
                system = _PenalizedSystem(B, D, lam)
            except RankDeficientError:
                continue
            df = system.trace
            if df >= n - 1e-9:
                continue
            resid = Y - system.fitted(Y)
            sse = np.sum(resid**2, axis=0)
            scores[members, j] = n * sse / (n - df) ** 2
    return scores


def gcv_select(serieses, basis: BSplineBasis, lambda_grid=DEFAULT_LAMBDA_GRID, origin=None) -> float:
    """λ on the grid minimizing the mean GCV across curves; ties go to the larger λ."""
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0 or np.any(grid < 0):
        raise EpimobError("lambda grid must be non-empty and non-negative")
    scores = gcv_scores(serieses, basis, grid, origin)
    excluded = np.isnan(scores).any(axis=0)
    if excluded.any():
        log.warning("excluding %d lambda values with df >= n: %s", excluded.sum(), grid[excluded])
    if excluded.all():
        raise RankDeficientError("no lambda on the grid leaves residual degrees of freedom")
    mean = np.where(excluded, np.inf, np.nanmean(np.where(np.isnan(scores), 0, scores), axis=0))
    best = mean.min()
    tied = np.flatnonzero(mean <= best * (1 + 1e-12))
    return float(grid[tied].max())


def smooth_all(serieses, basis: BSplineBasis, lambda_grid=DEFAULT_LAMBDA_GRID, origin=None):
    """Smooth a set of series with the shared GCV-selected λ; returns (curves, λ)."""
    lam = gcv_select(serieses, basis, lambda_grid, origin)
    return [penalized_smooth(s, basis, lam, origin) for s in serieses], lam


def normalize_curve(curve: SmoothedCurve) -> SmoothedCurve:
    """Divide a curve by its own maximum over the domain."""
    _, peak = curve.maximum()
    if not peak > 0:
        raise EpimobError(f"curve {curve.unit_id!r} has a non-positive maximum; cannot normalize")
    return curve.scaled(1.0 / peak)
