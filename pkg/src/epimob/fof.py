"""Function-on-function regression of registered R_t curves on M_t curves.

Model, for units i = 1..n on a common domain:

    y_i(t) = α(t) + ∫ β(s, t) x_i(s) ds [+ z_i β_pc(t)] + ε_i(t)

β is expanded on a tensor product of cubic B-splines, ``β(s,t) = φ(s)ᵀ B ψ(t)``,
so ``∫ β(s,t) x_i(s) ds = ψ(t)ᵀ Bᵀ q_i`` with ``q_ik = ∫ φ_k x_i`` computed
exactly. Responses are evaluated on a daily grid. Centering q and y removes
α, which is then recovered pointwise as ``ȳ(t) - ∫ β(s,t) x̄(s) ds``; this is
the unrestricted least-squares intercept and makes residuals sum to zero on
the grid.

Penalties on β are ``λ (∫∫ (∂²β/∂s²)² + ∫∫ (∂²β/∂t²)²)``, and ``λ ∫ β_pc''²``
for the scalar term. Each block's penalty is rescaled by the size of its
design so that λ is dimensionless and fits are equivariant to rescaling x
or z. λ is chosen on a grid by GCV over the pooled grid residuals.

Pointwise standard errors use the sandwich
``A⁻¹ [(Ψᵀ Σ Ψ) ⊗ (QᵀQ)] A⁻¹`` with the between-time residual covariance Σ
estimated from the residual curves.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .errors import EmptyDomainError, EpimobError, RankDeficientError
from .fda.basis import (
    BSplineBasis,
    SmoothedCurve,
    build_basis,
    common_domain,
    quadrature_nodes,
)

log = logging.getLogger(__name__)

DEFAULT_FOF_LAMBDAS = np.logspace(-8, 2, 21)


def daily_grid(domain) -> np.ndarray:
    a, b = domain
    return a + np.arange(int(np.floor(b - a + 1e-9)) + 1)


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def basis_products(curves, basis: BSplineBasis, domain) -> np.ndarray:
    """``Q[i, k] = ∫ φ_k(s) x_i(s) ds`` over ``domain``, exact."""
    a, b = domain
    out = np.empty((len(curves), basis.n_basis))
    for i, c in enumerate(curves):
        x, w = quadrature_nodes([basis.breakpoints, c.breakpoints], a, b, max(basis.order, c.basis.order))
        out[i] = (basis.evaluate(x) * (w * c(np.clip(x, *c.domain)))[:, None]).sum(axis=0)
    return out


@dataclass(frozen=True)
class _Design:
    """Centered unit-level design and the grid quantities shared by every λ."""

    Y: np.ndarray
    ybar: np.ndarray
    Q: np.ndarray
    Psi: np.ndarray
    pen: np.ndarray
    xtx: np.ndarray
    xty: np.ndarray
    k_rows: int


def _kron_penalty(basis_s, basis_t, with_beta: bool, with_scalar: bool, q_beta, q_scalar, psi):
    """Penalty matrix on vec(Θ) (column-major, Θ has one row per unit-level regressor)."""
    Kt = basis_t.n_basis
    Gt, Pt = basis_t.gram(0), basis_t.gram(2)
    PtP = psi.T @ psi
    blocks_rows = (basis_s.n_basis if with_beta else 0) + (1 if with_scalar else 0)
    S_s = np.zeros((blocks_rows, blocks_rows))
    S_g = np.zeros((blocks_rows, blocks_rows))
    if with_beta:
        Ks = basis_s.n_basis
        Ps, Gs = basis_s.gram(2), basis_s.gram(0)
        raw = np.kron(Gt, Ps) + np.kron(Pt, Gs)
        scale = np.trace(PtP) * np.trace(q_beta.T @ q_beta) / np.trace(raw)
        S_s[:Ks, :Ks] = Ps * scale
        S_g[:Ks, :Ks] = Gs * scale
    if with_scalar:
        scale = np.trace(PtP) * float(q_scalar @ q_scalar) / np.trace(Pt)
        S_g[-1, -1] = scale
    pen = np.kron(Gt, S_s) + np.kron(Pt, S_g)
    return (pen + pen.T) / 2


def _build_design(Y, q_beta, q_scalar, basis_s, basis_t, psi) -> _Design:
    cols = []
    if q_beta is not None:
        cols.append(q_beta)
    if q_scalar is not None:
        cols.append(q_scalar[:, None])
    Q = np.hstack(cols)
    ybar = Y.mean(axis=0)
    Yc = Y - ybar
    pen = _kron_penalty(basis_s, basis_t, q_beta is not None, q_scalar is not None, q_beta, q_scalar, psi)
    xtx = np.kron(psi.T @ psi, Q.T @ Q)
    xty = (Q.T @ Yc @ psi).ravel(order="F")
    return _Design(Yc, ybar, Q, psi, pen, xtx, xty, Q.shape[1])


@dataclass(frozen=True)
class _Solution:
    theta: np.ndarray
    a_inv: np.ndarray
    fitted: np.ndarray
    resid: np.ndarray
    rss: float
    df: float
    lam: float
    gcv: float


def _solve(design: _Design, lam: float) -> _Solution:
    A = design.xtx + lam * design.pen
    try:
        cho = linalg.cho_factor(A)
    except linalg.LinAlgError:
        raise RankDeficientError(f"penalized normal equations are singular at λ={lam:g}") from None
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e13:
        raise RankDeficientError(f"penalized normal equations are ill-conditioned at λ={lam:g} (cond {cond:.2e})")
    a_inv = linalg.cho_solve(cho, np.eye(A.shape[0]))
    vec = a_inv @ design.xty
    theta = vec.reshape((design.k_rows, -1), order="F")
    fitted = design.Q @ theta @ design.Psi.T
    resid = design.Y - fitted
    rss = float(np.sum(resid**2))
    df = float(np.sum(a_inv * design.xtx.T))
    # residual curves are correlated along t, so units (not grid points) are
    # the sample; df / K_t is the effective number of unit-level parameters
    n = design.Y.shape[0]
    unit_df = df / design.Psi.shape[1]
    gcv = n * rss / (n - unit_df) ** 2 if n > unit_df else np.inf
    return _Solution(theta, a_inv, fitted, resid, rss, df, lam, gcv)


def _select(design: _Design, penalty, lambda_grid) -> _Solution:
    if penalty is not None:
        lam_s, lam_t = penalty if np.ndim(penalty) else (penalty, penalty)
        if lam_s != lam_t:
            raise EpimobError("separate λ_s and λ_t are not supported; pass equal values")
        return _solve(design, float(lam_s))
    best = None
    errors = []
    for lam in sorted(lambda_grid, reverse=True):
        try:
            sol = _solve(design, float(lam))
        except RankDeficientError as exc:
            errors.append(str(exc))
            continue
        # strict improvement required, so ties keep the larger λ
        if best is None or sol.gcv < best.gcv * (1 - 1e-12):
            best = sol
    if best is None:
        raise RankDeficientError("no λ on the grid gives a solvable system: " + "; ".join(errors))
    return best


@dataclass(frozen=True)
class FoFFit:
    """Fitted function-on-function regression.

    Grid arrays have one row per unit and one column per day of ``grid``.
    ``coef`` is the K_s x K_t coefficient matrix of β; ``coef_cov`` is the
    covariance of ``vec(Θ)`` (column-major, Θ stacks β rows and, if present,
    the scalar-effect row).
    """

    unit_ids: tuple
    domain: tuple
    grid: np.ndarray
    basis_s: BSplineBasis
    basis_t: BSplineBasis
    coef: np.ndarray | None
    scalar_coef: np.ndarray | None
    intercept: SmoothedCurve
    intercept_values: np.ndarray
    y_values: np.ndarray
    fitted_values: np.ndarray
    residuals: np.ndarray
    r2: float
    adjusted_r2: float
    lam: float
    effective_df: float
    coef_cov: np.ndarray
    resid_cov: np.ndarray
    resid_dof: float
    partial_r2: dict = field(default_factory=dict)
    warnings: tuple = ()

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def _beta_rows(self) -> int:
        return 0 if self.coef is None else self.basis_s.n_basis

    @property
    def _k_rows(self) -> int:
        return self._beta_rows + (0 if self.scalar_coef is None else 1)

    def beta(self, s, t) -> np.ndarray:
        """β on the outer grid ``s x t``."""
        if self.coef is None:
            raise EpimobError("fit has no mobility term")
        return self.basis_s.evaluate(s) @ self.coef @ self.basis_t.evaluate(t).T

    def beta_se(self, s, t) -> np.ndarray:
        if self.coef is None:
            raise EpimobError("fit has no mobility term")
        Ks, Kt, P = self.basis_s.n_basis, self.basis_t.n_basis, self._k_rows
        V = self.coef_cov.reshape(Kt, P, Kt, P)[:, :Ks, :, :Ks]
        phi = self.basis_s.evaluate(s)
        psi = self.basis_t.evaluate(t)
        inner = np.einsum("sk,lkmn,sn->slm", phi, V, phi)
        var = np.einsum("tl,slm,tm->st", psi, inner, psi)
        return np.sqrt(np.clip(var, 0, None))

    def beta_along(self, s, lag) -> tuple[np.ndarray, np.ndarray]:
        """β(s, s + lag) and its standard error for each s."""
        s = np.asarray(s, dtype=float)
        t = s + lag
        phi = self.basis_s.evaluate(s)
        psi = self.basis_t.evaluate(t)
        est = np.einsum("sk,kl,sl->s", phi, self.coef, psi)
        Ks, Kt, P = self.basis_s.n_basis, self.basis_t.n_basis, self._k_rows
        V = self.coef_cov.reshape(Kt, P, Kt, P)[:, :Ks, :, :Ks]
        var = np.einsum("sk,sl,lkmn,sn,sm->s", phi, psi, V, phi, psi)
        return est, np.sqrt(np.clip(var, 0, None))

    def scalar_effect(self, t) -> tuple[np.ndarray, np.ndarray]:
        """β_pc(t) and its standard error."""
        if self.scalar_coef is None:
            raise EpimobError("fit has no scalar covariate")
        Kt, P = self.basis_t.n_basis, self._k_rows
        V = self.coef_cov.reshape(Kt, P, Kt, P)[:, P - 1, :, P - 1]
        psi = self.basis_t.evaluate(t)
        var = np.einsum("tl,lm,tm->t", psi, V, psi)
        return psi @ self.scalar_coef, np.sqrt(np.clip(var, 0, None))

    def critical_value(self, level: float) -> float:
        """Two-sided t quantile on the unit-level residual degrees of freedom."""
        _check_level(level)
        return float(stats.t.ppf((1 + level) / 2, self.resid_dof))

    def residual_mean_norm(self) -> float:
        """L2 norm (trapezoid on the grid) of the mean residual curve."""
        m = self.residuals.mean(axis=0)
        return float(np.sqrt(np.dot(trapezoid_weights(len(m)), m**2)))


def _r2(y_values, resid) -> float:
    w = trapezoid_weights(y_values.shape[1])
    sse = float(np.sum((resid**2) @ w))
    sst = float(np.sum(((y_values - y_values.mean(axis=0)) ** 2) @ w))
    if sst <= 0:
        raise EpimobError("responses have no variation across units")
    return 1.0 - sse / sst


def _adjusted_r2(y_values, sol, k_t) -> float:
    """R² with residual and total variances on their degrees of freedom."""
    n = y_values.shape[0]
    dof = n - 1 - sol.df / k_t
    if dof <= 0:
        return np.nan
    return 1.0 - (1.0 - _r2(y_values, sol.resid)) * (n - 1) / dof


def _prepare(ys, xs, k_s, k_t):
    ys, xs = list(ys), list(xs)
    if len(ys) != len(xs):
        raise EpimobError("ys and xs must be paired")
    if len(ys) < 2:
        raise EpimobError("need at least two units")
    domain = common_domain(ys + xs)
    grid = daily_grid(domain)
    if len(grid) < max(k_t, 4):
        raise EmptyDomainError(f"common domain {domain} too short for {k_t} basis functions")
    basis_s = build_basis(domain, k_s)
    basis_t = build_basis(domain, k_t)
    Y = np.vstack([c(grid) for c in ys])
    return ys, xs, domain, grid, basis_s, basis_t, Y


def _standardize_scalar(z, n):
    z = np.asarray(z, dtype=float)
    if z.shape != (n,) or not np.all(np.isfinite(z)):
        raise EpimobError("scalar covariate must be finite with one value per unit")
    zc = z - z.mean()
    sd = zc.std(ddof=1)
    if not sd > 1e-12 * max(1.0, np.abs(z).max()):
        raise RankDeficientError("scalar covariate is constant; its effect is indeterminate")
    return zc / sd


def _fit_design(Y, q_beta, q_scalar, basis_s, basis_t, grid, penalty, lambda_grid):
    psi = basis_t.evaluate(grid)
    design = _build_design(Y, q_beta, q_scalar, basis_s, basis_t, psi)
    return design, _select(design, penalty, lambda_grid)


def _center_products(Qraw):
    qbar = Qraw.mean(axis=0)
    Qc = Qraw - qbar
    scale = max(np.abs(Qraw).max(), 1e-300)
    if np.abs(Qc).max() <= 1e-10 * scale:
        raise RankDeficientError("predictor curves do not vary across units; β is indeterminate", effective_df=0.0)
    return qbar, Qc


def _assemble(unit_ids, domain, grid, basis_s, basis_t, Y, design, sol, qbar, has_beta, has_scalar, warnings=()):
    n, T = Y.shape
    Ks = basis_s.n_basis if has_beta else 0
    theta = sol.theta
    coef = theta[:Ks] if has_beta else None
    scalar_coef = theta[-1] if has_scalar else None
    psi = design.Psi
    alpha = design.ybar - (psi @ (coef.T @ qbar) if has_beta else 0.0)
    resid = sol.resid
    fitted = Y - resid
    Kt = basis_t.n_basis
    dof = n - 1 - sol.df / Kt
    if n < 3 or dof <= 0:
        resid_cov = np.full((T, T), np.nan)
        cov = np.full_like(sol.a_inv, np.nan)
    else:
        resid_cov = resid.T @ resid / dof
        meat = np.kron(psi.T @ resid_cov @ psi, design.Q.T @ design.Q)
        cov = sol.a_inv @ meat @ sol.a_inv
        cov = (cov + cov.T) / 2
    a, _ = domain
    alpha_basis = build_basis((grid[0], grid[-1]), len(grid))
    alpha_coef = np.linalg.solve(alpha_basis.evaluate(grid), alpha)
    intercept = SmoothedCurve(alpha_basis, alpha_coef, (grid[0], grid[-1]), "alpha")
    return FoFFit(
        unit_ids=tuple(unit_ids),
        domain=tuple(domain),
        grid=grid,
        basis_s=basis_s,
        basis_t=basis_t,
        coef=coef,
        scalar_coef=scalar_coef,
        intercept=intercept,
        intercept_values=alpha,
        y_values=Y,
        fitted_values=fitted,
        residuals=resid,
        r2=_r2(Y, resid),
        adjusted_r2=_adjusted_r2(Y, sol, Kt),
        lam=sol.lam,
        effective_df=sol.df,
        coef_cov=cov,
        resid_cov=resid_cov,
        resid_dof=float(dof),
        warnings=tuple(warnings),
    )


def fit_fof(ys, xs, k_s: int = 10, k_t: int = 10, penalty=None, lambda_grid=DEFAULT_FOF_LAMBDAS) -> FoFFit:
    """Fit ``y_i(t) = α(t) + ∫ β(s,t) x_i(s) ds + ε_i(t)``.

    Parameters
    ----------
    ys, xs : sequences of SmoothedCurve
        Registered response and predictor curves, paired by position.
    k_s, k_t : int
        Cubic B-spline basis sizes for β in s and t.
    penalty : float or (float, float), optional
        Fixed dimensionless λ; when omitted λ is chosen by GCV on ``lambda_grid``.
    """
    ys, xs, domain, grid, basis_s, basis_t, Y = _prepare(ys, xs, k_s, k_t)
    qbar, Qc = _center_products(basis_products(xs, basis_s, domain))
    design, sol = _fit_design(Y, Qc, None, basis_s, basis_t, grid, penalty, lambda_grid)
    if sol.df >= Y.size:
        raise RankDeficientError("effective degrees of freedom exceed the data", sol.df)
    fit = _assemble([c.unit_id for c in ys], domain, grid, basis_s, basis_t, Y, design, sol, qbar, True, False)
    object.__setattr__(fit, "partial_r2", {"mobility": fit.adjusted_r2})
    return fit


def fit_fof_with_scalar(ys, xs, z, k_s: int = 10, k_t: int = 10, penalty=None, lambda_grid=DEFAULT_FOF_LAMBDAS) -> FoFFit:
    """FoF regression with an extra scalar covariate term ``z_i β_pc(t)``.

    ``z`` is standardized internally. Partial R² of each term is the drop in
    explained variance when that term is removed and the model refit at the
    same λ. Explained variance is measured by the degrees-of-freedom
    adjusted R², so a covariate unrelated to the response contributes about
    zero rather than its chance fit.
    """
    ys, xs, domain, grid, basis_s, basis_t, Y = _prepare(ys, xs, k_s, k_t)
    zs = _standardize_scalar(z, len(ys))
    qbar, Qc = _center_products(basis_products(xs, basis_s, domain))
    warnings = []
    coef, *_ = np.linalg.lstsq(Qc, zs, rcond=None)
    collinear_r2 = 1 - np.sum((zs - Qc @ coef) ** 2) / np.sum(zs**2)
    if collinear_r2 > 0.99:
        msg = f"scalar covariate is nearly collinear with mobility (R² = {collinear_r2:.4f}); near-singular design"
        log.warning(msg)
        warnings.append(msg)
    try:
        design, sol = _fit_design(Y, Qc, zs, basis_s, basis_t, grid, penalty, lambda_grid)
    except RankDeficientError as exc:
        if warnings:
            raise RankDeficientError(f"{warnings[0]}; the split between the terms is not identified ({exc})") from None
        raise
    full = _assemble([c.unit_id for c in ys], domain, grid, basis_s, basis_t, Y, design, sol, qbar, True, True, warnings)
    _, no_mob = _fit_design(Y, None, zs, basis_s, basis_t, grid, sol.lam, lambda_grid)
    _, no_pc = _fit_design(Y, Qc, None, basis_s, basis_t, grid, sol.lam, lambda_grid)
    kt = basis_t.n_basis
    partial = {
        "mobility": full.adjusted_r2 - _adjusted_r2(Y, no_mob, kt),
        "pc1": full.adjusted_r2 - _adjusted_r2(Y, no_pc, kt),
    }
    object.__setattr__(full, "partial_r2", partial)
    return full


@dataclass(frozen=True)
class BandSurface:
    s: np.ndarray
    t: np.ndarray
    beta: np.ndarray
    se: np.ndarray
    level: float
    z: float

    @property
    def lower(self):
        return self.beta - self.z * self.se

    @property
    def upper(self):
        return self.beta + self.z * self.se

    @property
    def covers_zero(self):
        return (self.lower <= 0) & (self.upper >= 0)


def _check_level(level):
    if not 0 < level < 1:
        raise EpimobError("level must lie in (0, 1)")


def _check_band_units(fit: FoFFit):
    if fit.n_units < 3 or not np.all(np.isfinite(fit.coef_cov)):
        raise EpimobError("at least 3 units (and residual degrees of freedom) are needed for bands")


def confidence_band(fit: FoFFit, level: float = 0.95, s=None, t=None) -> BandSurface:
    """Pointwise ``β ± c SE`` on the daily grid (or given ``s``, ``t``).

    ``c`` is the t quantile on the residual degrees of freedom left after
    centering and the effective unit-level parameters; it tends to the
    normal quantile as the number of units grows.
    """
    _check_level(level)
    _check_band_units(fit)
    s = fit.grid if s is None else np.asarray(s, float)
    t = fit.grid if t is None else np.asarray(t, float)
    return BandSurface(s, t, fit.beta(s, t), fit.beta_se(s, t), level, fit.critical_value(level))


@dataclass(frozen=True)
class LagSlice:
    lag: float
    s: np.ndarray
    beta: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    @property
    def significant(self) -> np.ndarray:
        """+1 where the band lies above 0, -1 below, 0 where it contains 0."""
        return np.where(self.lower > 0, 1, np.where(self.upper < 0, -1, 0))

    def significant_intervals(self) -> list[tuple[float, float, int]]:
        """Maximal runs of grid days with a band excluding 0, as (start, end, sign)."""
        sig = self.significant
        out = []
        i = 0
        while i < len(sig):
            if sig[i] == 0:
                i += 1
                continue
            j = i
            while j + 1 < len(sig) and sig[j + 1] == sig[i]:
                j += 1
            out.append((float(self.s[i]), float(self.s[j]), int(sig[i])))
            i = j + 1
        return out


def lag_slice(fit: FoFFit, lag: float = 13, level: float = 0.95) -> LagSlice:
    """β(s, s + lag) with its pointwise band on the valid part of the grid."""
    if lag < 0:
        raise EpimobError("lag must be >= 0")
    _check_level(level)
    a, b = fit.domain
    s = fit.grid[fit.grid + lag <= b + 1e-9]
    if s.size == 0:
        raise EmptyDomainError(f"lag {lag} leaves no s with s + lag inside [{a}, {b}]")
    est, se = fit.beta_along(s, lag)
    if np.all(np.isfinite(fit.coef_cov)):
        z = fit.critical_value(level)
        lo, hi = est - z * se, est + z * se
    else:
        lo = hi = np.full_like(est, np.nan)
    return LagSlice(float(lag), s, est, se, lo, hi, level)


@dataclass(frozen=True)
class Pc1Result:
    scores: np.ndarray
    loadings: np.ndarray
    explained: float


def compute_pc1(covariates) -> Pc1Result:
    """First principal-component score of standardized per-unit covariates.

    ``covariates`` is an (n_units, p) array. The sign makes the first
    covariate's loading non-negative.
    """
    X = np.asarray(covariates, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise EpimobError("need an (n_units, p >= 2) covariate matrix")
    if np.isnan(X).any():
        raise EpimobError("covariates contain missing values")
    sd = X.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise EpimobError("covariates must not be constant")
    Z = (X - X.mean(axis=0)) / sd
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    v = Vt[0]
    sign = 1.0 if v[0] >= 0 else -1.0
    return Pc1Result(scores=sign * U[:, 0] * s[0], loadings=sign * v, explained=float(s[0] ** 2 / np.sum(s**2)))
