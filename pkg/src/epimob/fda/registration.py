"""Shift registration of paired R_t / M_t curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyDomainError, EpimobError
from .basis import SmoothedCurve, quadrature_nodes
from .fcc import FccResult, first_fcc, project_fcc
from .smoothing import normalize_curve

DEFAULT_CAP = 20.0
DEFAULT_STEP = 0.5


def shift_grid(cap: float = DEFAULT_CAP, step: float = DEFAULT_STEP) -> np.ndarray:
    n = int(np.floor(cap / step + 1e-9))
    return np.arange(-n, n + 1) * step


def shift_cost(curve: SmoothedCurve, target: SmoothedCurve, delta: float) -> float:
    """Mean squared gap ``∫ (curve(t - δ) - target(t))² dt / overlap`` (inf if no overlap)."""
    a = max(curve.domain[0] + delta, target.domain[0])
    b = min(curve.domain[1] + delta, target.domain[1])
    if not b - a > 1e-9:
        return np.inf
    n = max(curve.basis.order, target.basis.order)
    x, w = quadrature_nodes([curve.breakpoints + delta, target.breakpoints], a, b, n)
    # guard against nodes drifting a hair outside the shifted domain
    xc = np.clip(x - delta, *curve.domain)
    gap = curve(xc) - target(np.clip(x, *target.domain))
    return float(np.dot(w, gap**2) / (b - a))


def estimate_shift(curve: SmoothedCurve, target: SmoothedCurve, cap: float = DEFAULT_CAP, step: float = DEFAULT_STEP) -> float:
    """Grid shift δ in [-cap, cap] making ``curve(t - δ)`` closest to ``target``.

    Ties go to the smallest ``|δ|``.
    """
    if cap < 0 or step <= 0:
        raise EpimobError("cap must be >= 0 and step > 0")
    grid = shift_grid(cap, step)
    grid = grid[np.lexsort((grid, np.abs(grid)))]
    costs = np.array([shift_cost(curve, target, d) for d in grid])
    if not np.isfinite(costs).any():
        raise EmptyDomainError("curve and target never overlap for shifts within the cap")
    best = costs.min()
    ok = np.flatnonzero(costs <= best + 1e-12 * max(best, 1e-300) + 1e-15)
    return float(grid[ok[0]])


def register_pair(r: SmoothedCurve, m: SmoothedCurve, delta: float, cap: float = DEFAULT_CAP):
    """Apply one shift to both curves of a unit."""
    if abs(delta) > cap + 1e-12:
        raise EpimobError(f"shift {delta} exceeds the cap {cap}")
    return r.shifted(delta), m.shifted(delta)


@dataclass(frozen=True)
class RegistrationResult:
    shifts: dict
    domain: tuple
    cap: float
    r_curves: list
    m_curves: list
    fcc: FccResult | None = None


def shifted_intersection(domains, shifts):
    """Intersection of ``[a_i + δ_i, b_i + δ_i]``; returns (a, b, index of max start, index of min end)."""
    starts = np.array([d[0] + s for d, s in zip(domains, shifts)])
    ends = np.array([d[1] + s for d, s in zip(domains, shifts)])
    i, j = int(np.argmax(starts)), int(np.argmin(ends))
    return float(starts[i]), float(ends[j]), i, j


def register_set(rs, ms, shifts, cap: float = DEFAULT_CAP, fcc=None) -> RegistrationResult:
    """Shift every pair and restrict all curves to their common domain."""
    rs, ms, shifts = list(rs), list(ms), [float(s) for s in shifts]
    if not len(rs) == len(ms) == len(shifts):
        raise EpimobError("need one shift per curve pair")
    pairs = [register_pair(r, m, d, cap) for r, m, d in zip(rs, ms, shifts)]
    domains = [
        (max(r.domain[0], m.domain[0]), min(r.domain[1], m.domain[1])) for r, m in zip(rs, ms)
    ]
    a, b, i, j = shifted_intersection(domains, shifts)
    if not b > a:
        raise EmptyDomainError(
            f"registered curves share no domain: {rs[i].unit_id!r} starts at {a:g} "
            f"after {rs[j].unit_id!r} ends at {b:g}"
        )
    r_out = [pr.restricted(a, b) for pr, _ in pairs]
    m_out = [pm.restricted(a, b) for _, pm in pairs]
    return RegistrationResult(
        shifts={r.unit_id: s for r, s in zip(rs, shifts)},
        domain=(a, b),
        cap=cap,
        r_curves=r_out,
        m_curves=m_out,
        fcc=fcc,
    )


def register_to_fcc(rs, ms, cap: float = DEFAULT_CAP, step: float = DEFAULT_STEP) -> RegistrationResult:
    """Align each unit's normalized R curve to its own FCC projection.

    FCC and shift estimation use max-normalized curves; the returned curves
    keep their original scale.
    """
    rs, ms = list(rs), list(ms)
    nr = [normalize_curve(c) for c in rs]
    nm = [normalize_curve(c) for c in ms]
    fcc = first_fcc(nr, nm)
    shifts = [estimate_shift(c, project_fcc(c, fcc, "r"), cap, step) for c in nr]
    return register_set(rs, ms, shifts, cap, fcc)
