"""B-spline bases, curves represented on them, and exact integrals.

Every integral here is of a piecewise polynomial, so Gauss-Legendre
quadrature with enough nodes on each polynomial piece is exact up to
rounding. Pieces are delimited by the union of the knots of all factors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from ..errors import BasisMismatchError, EmptyDomainError, EpimobError

_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """B-spline basis of a given order (4 = cubic) on a clamped knot vector."""

    knots: np.ndarray
    order: int = 4

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if np.any(np.diff(knots) < 0):
            raise EpimobError("knots must be non-decreasing")
        if len(knots) < 2 * self.order:
            raise EpimobError("knot vector too short for the order")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    def __eq__(self, other):
        return (
            isinstance(other, BSplineBasis)
            and self.order == other.order
            and self.knots.shape == other.knots.shape
            and np.allclose(self.knots, other.knots, rtol=0, atol=_ATOL)
        )

    def __hash__(self):
        return hash((self.order, len(self.knots)))

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.order

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[self.n_basis])

    @property
    def breakpoints(self) -> np.ndarray:
        a, b = self.domain
        return np.unique(self.knots[(self.knots >= a) & (self.knots <= b)])

    def evaluate(self, x, deriv: int = 0) -> np.ndarray:
        """Matrix of basis values (or derivatives), shape ``(len(x), n_basis)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a, b = self.domain
        if x.size and (x.min() < a - _ATOL or x.max() > b + _ATOL):
            raise EpimobError(f"evaluation points outside basis support [{a}, {b}]")
        x = np.clip(x, a, b)
        spl = BSpline(self.knots, np.eye(self.n_basis), self.degree, extrapolate=False)
        out = spl(x, nu=deriv) if deriv else spl(x)
        return np.nan_to_num(out, nan=0.0)

    def gram(self, deriv: int = 0, domain=None) -> np.ndarray:
        """Exact ``∫ D^m B_i D^m B_j`` over ``domain`` (default: the full support)."""
        a, b = domain if domain is not None else self.domain
        x, w = quadrature_nodes([self.breakpoints], a, b, self.order)
        B = self.evaluate(x, deriv)
        return (B * w[:, None]).T @ B

    def integrals(self, domain=None) -> np.ndarray:
        """Exact ``∫ B_i`` over ``domain``."""
        a, b = domain if domain is not None else self.domain
        x, w = quadrature_nodes([self.breakpoints], a, b, self.order)
        return w @ self.evaluate(x)

    def shifted(self, delta: float) -> "BSplineBasis":
        return BSplineBasis(self.knots + delta, self.order)

    def to_dict(self) -> dict:
        return {"order": self.order, "knots": [float(k) for k in self.knots]}

    @classmethod
    def from_dict(cls, d) -> "BSplineBasis":
        return cls(np.asarray(d["knots"], dtype=float), int(d["order"]))


def build_basis(domain, n_basis: int = 32, order: int = 4) -> BSplineBasis:
    """Clamped basis with equally spaced interior knots on ``domain``."""
    a, b = map(float, domain)
    if n_basis < order:
        raise EpimobError(f"n_basis ({n_basis}) must be >= order ({order})")
    if order < 1:
        raise EpimobError("order must be >= 1")
    if not b - a > 0:
        raise EpimobError("domain must have positive length")
    n_interior = n_basis - order
    inner = np.linspace(a, b, n_interior + 2)
    knots = np.concatenate([np.full(order - 1, a), inner, np.full(order - 1, b)])
    return BSplineBasis(knots, order)


def quadrature_nodes(breakpoint_sets, a, b, n_nodes):
    """Gauss-Legendre nodes/weights on [a, b] split at every breakpoint.

    ``n_nodes`` points per piece integrate polynomials of degree
    ``2 * n_nodes - 1`` exactly.
    """
    if not b > a:
        raise EmptyDomainError(f"empty integration interval [{a}, {b}]")
    pts = [np.array([a, b])]
    for bp in breakpoint_sets:
        bp = np.asarray(bp, dtype=float)
        pts.append(bp[(bp > a) & (bp < b)])
    edges = np.unique(np.concatenate(pts))
    # merge edges closer than rounding noise
    edges = edges[np.concatenate([[True], np.diff(edges) > 1e-12])]
    edges[-1] = b
    g, gw = np.polynomial.legendre.leggauss(n_nodes)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = (hi - lo) / 2
    x = (lo + hi) / 2 + half * g[None, :]
    w = half * gw[None, :]
    return x.ravel(), w.ravel()


@dataclass(frozen=True, eq=False)
class SmoothedCurve:
    """A function ``Σ coef_k B_k(t)`` restricted to ``domain``."""

    basis: BSplineBasis
    coef: np.ndarray
    domain: tuple
    unit_id: str = ""

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.shape != (self.basis.n_basis,):
            raise EpimobError(
                f"coefficient length {coef.shape} does not match basis size {self.basis.n_basis}"
            )
        a, b = map(float, self.domain)
        lo, hi = self.basis.domain
        if a < lo - _ATOL or b > hi + _ATOL or not b > a:
            raise EpimobError(f"curve domain [{a}, {b}] not inside basis support [{lo}, {hi}]")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "domain", (a, b))

    def __call__(self, x, deriv: int = 0):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a, b = self.domain
        if x.size and (x.min() < a - _ATOL or x.max() > b + _ATOL):
            raise EpimobError(f"evaluation outside curve domain [{a}, {b}]")
        y = self.basis.evaluate(x, deriv) @ self.coef
        return float(y[0]) if scalar else y

    @property
    def breakpoints(self):
        return self.basis.breakpoints

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    def daily_grid(self) -> np.ndarray:
        a, b = self.domain
        return a + np.arange(int(np.floor(b - a + 1e-9)) + 1)

    def shifted(self, delta: float) -> "SmoothedCurve":
        """``t -> f(t - delta)``: the same shape moved ``delta`` days later."""
        a, b = self.domain
        return SmoothedCurve(self.basis.shifted(delta), self.coef, (a + delta, b + delta), self.unit_id)

    def restricted(self, a, b) -> "SmoothedCurve":
        lo, hi = self.domain
        if a < lo - _ATOL or b > hi + _ATOL:
            raise EmptyDomainError(f"[{a}, {b}] is not inside curve domain [{lo}, {hi}]")
        return SmoothedCurve(self.basis, self.coef, (max(a, lo), min(b, hi)), self.unit_id)

    def with_coef(self, coef, unit_id=None) -> "SmoothedCurve":
        return SmoothedCurve(self.basis, coef, self.domain, self.unit_id if unit_id is None else unit_id)

    def scaled(self, factor: float) -> "SmoothedCurve":
        return self.with_coef(self.coef * factor)

    def maximum(self, resolution: float = 0.05):
        """(argmax, max) on a fine grid over the domain."""
        a, b = self.domain
        x = np.linspace(a, b, int(np.ceil((b - a) / resolution)) + 1)
        y = self(x)
        i = int(np.argmax(y))
        return float(x[i]), float(y[i])

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "domain": list(self.domain),
            "basis": self.basis.to_dict(),
            "coef": [float(c) for c in self.coef],
        }

    @classmethod
    def from_dict(cls, d) -> "SmoothedCurve":
        return cls(BSplineBasis.from_dict(d["basis"]), np.asarray(d["coef"], float), tuple(d["domain"]), d.get("unit_id", ""))


def same_basis(curves) -> BSplineBasis:
    curves = list(curves)
    basis = curves[0].basis
    for c in curves[1:]:
        if c.basis != basis:
            raise BasisMismatchError(f"curve {c.unit_id!r} uses a different basis")
    return basis


def common_domain(curves) -> tuple[float, float]:
    a = max(c.domain[0] for c in curves)
    b = min(c.domain[1] for c in curves)
    if not b > a:
        raise EmptyDomainError("curves have no common domain")
    return a, b


def inner_product(f: SmoothedCurve, g: SmoothedCurve, domain=None) -> float:
    """Exact ``∫ f g`` over the intersection of domains (or ``domain``)."""
    a, b = domain if domain is not None else common_domain([f, g])
    n = max(f.basis.order, g.basis.order)
    x, w = quadrature_nodes([f.breakpoints, g.breakpoints], a, b, n)
    return float(np.dot(w, f(x) * g(x)))


def l2_distance_sq(f: SmoothedCurve, g: SmoothedCurve, domain=None) -> float:
    a, b = domain if domain is not None else common_domain([f, g])
    n = max(f.basis.order, g.basis.order)
    x, w = quadrature_nodes([f.breakpoints, g.breakpoints], a, b, n)
    return float(np.dot(w, (f(x) - g(x)) ** 2))


def sample_daily(curve: SmoothedCurve) -> tuple[np.ndarray, np.ndarray]:
    x = curve.daily_grid()
    return x, curve(x)
