"""Net reproduction number from daily cases via the Poisson renewal likelihood.

Given the case history, the likelihood factorizes over days, so under a flat
prior each day's R_t has its own posterior

    p(R_t | C) ∝ Poisson(C(t); R_t Λ(t)) 1{0 < R_t <= r_max},
    Λ(t) = Σ_s φ(s) C(t - s).

Each day gets an independent random-walk Metropolis-Hastings chain on
log R_t. Chains are advanced together as a vector, but every day draws from
its own generator seeded by ``(seed, t)``, so results do not depend on which
days are estimated together.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import EpimobError
from .series import DailySeries, centered_moving_average

log = logging.getLogger(__name__)

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


@dataclass(frozen=True)
class GenerationTimeDist:
    """Discretized gamma generation-time distribution on days 1..S."""

    shape: float
    rate: float
    pmf: np.ndarray
    mass_cutoff: float = 0.999

    @property
    def horizon(self) -> int:
        return len(self.pmf)

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.horizon + 1), self.pmf))


def discretize_generation_time(shape=1.87, rate=0.28, mass_cutoff=0.999) -> GenerationTimeDist:
    """Bin a gamma(shape, rate) density onto integer days.

    Day ``s`` receives the mass on ``(s - 1/2, s + 1/2]``; day 1 also absorbs
    ``(0, 1/2]`` because a zero-day interval has no place in the renewal sum.
    The horizon ``S`` is the first day whose cumulative mass reaches
    ``mass_cutoff``; the pmf is then renormalized.
    """
    if not (shape > 0 and rate > 0):
        raise EpimobError("gamma shape and rate must be positive")
    if not 0 < mass_cutoff < 1:
        raise EpimobError("mass_cutoff must lie in (0, 1)")
    dist = stats.gamma(shape, scale=1.0 / rate)
    horizon = int(np.ceil(dist.ppf(mass_cutoff) - 0.5))
    horizon = max(horizon, 1)
    while horizon > 1 and dist.cdf(horizon - 0.5) >= mass_cutoff:
        horizon -= 1
    while dist.cdf(horizon + 0.5) < mass_cutoff:
        horizon += 1
    edges = np.arange(horizon + 1) + 0.5
    edges[0] = 0.0
    cdf = dist.cdf(edges)
    pmf = np.diff(cdf)
    pmf = pmf / pmf.sum()
    pmf.setflags(write=False)
    return GenerationTimeDist(shape, rate, pmf, mass_cutoff)


@dataclass(frozen=True)
class CaseSeries:
    unit_id: str
    start_date: object
    counts: np.ndarray
    raw: bool = True

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 1 or counts.size == 0:
            raise EpimobError("case series must be a non-empty vector")
        if np.isnan(counts).any() or (counts < 0).any():
            raise EpimobError("case counts must be finite and non-negative")
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return len(self.counts)

    @classmethod
    def from_daily(cls, series: DailySeries) -> "CaseSeries":
        return cls(series.unit_id, series.start_date, series.values, raw=True)

    def to_daily(self) -> DailySeries:
        return DailySeries(self.unit_id, self.start_date, self.counts, "cases")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 12000
    burn_in: int = 2000
    thinning: int = 5
    proposal_sd: float = 0.3
    r_max: float = 12.0
    rng_seed: int = 0
    adapt_scale: bool = True

    def __post_init__(self):
        if self.iterations <= self.burn_in or self.burn_in < 0:
            raise EpimobError("iterations must exceed burn_in >= 0")
        if self.thinning < 1:
            raise EpimobError("thinning must be >= 1")
        if not self.proposal_sd > 0:
            raise EpimobError("proposal_sd must be positive")
        if not self.r_max > 0:
            raise EpimobError("r_max must be positive")


@dataclass(frozen=True)
class RtPosterior:
    """Per-day posterior draws of R_t.

    ``samples`` has shape (n_days, n_draws); rows of undefined days
    (Λ(t) = 0) are NaN. ``acceptance`` is NaN on undefined days.
    """

    unit_id: str
    start_date: object
    samples: np.ndarray
    acceptance: np.ndarray
    pressure: np.ndarray
    warnings: tuple = field(default=(), compare=False)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.acceptance)

    @property
    def mean(self) -> np.ndarray:
        out = np.full(len(self.acceptance), np.nan)
        d = self.defined
        out[d] = self.samples[d].mean(axis=1)
        return out

    @property
    def sd(self) -> np.ndarray:
        out = np.full(len(self.acceptance), np.nan)
        d = self.defined
        out[d] = self.samples[d].std(axis=1, ddof=1)
        return out

    def quantiles(self, qs=QUANTILES) -> np.ndarray:
        out = np.full((len(self.acceptance), len(qs)), np.nan)
        d = self.defined
        out[d] = np.quantile(self.samples[d], qs, axis=1).T
        return out

    def summary_rows(self):
        """Rows of (day index, mean, sd, q2.5, q25, q50, q75, q97.5, acceptance)."""
        mean, sd, q = self.mean, self.sd, self.quantiles()
        for t in range(len(mean)):
            yield (t, mean[t], sd[t], *q[t], self.acceptance[t])


def smooth_cases(raw: CaseSeries, half_width: int = 4) -> CaseSeries:
    """Centered mean over ``[g - half_width, g + half_width]``, truncated at the edges."""
    if half_width < 0:
        raise EpimobError("half_width must be >= 0")
    if len(raw) == 0:
        raise EpimobError("empty case series")
    smoothed = centered_moving_average(raw.counts, 2 * half_width + 1)
    return CaseSeries(raw.unit_id, raw.start_date, smoothed, raw=False)


def _as_counts(cases):
    return cases.counts if isinstance(cases, CaseSeries) else np.asarray(cases, dtype=float)


def infection_pressure(cases, gt: GenerationTimeDist, t: int | None = None):
    """Λ(t) = Σ_{s=1..S} φ(s) C(t - s); lags before the series start count as 0.

    With ``t=None`` the whole vector Λ(0..n-1) is returned.
    """
    c = _as_counts(cases)
    if t is None:
        full = np.convolve(c, np.concatenate([[0.0], gt.pmf]))
        return full[: len(c)]
    if t < 1:
        raise EpimobError("infection pressure needs t >= 1")
    s = np.arange(1, gt.horizon + 1)
    lag = t - s
    ok = (lag >= 0) & (lag < len(c))
    return float(np.dot(gt.pmf[ok], c[lag[ok]]))


def log_likelihood(cases, gt: GenerationTimeDist, R) -> float:
    """Poisson renewal log-likelihood summed over days with Λ(t) > 0.

    Non-integer (smoothed) counts use log Γ(C + 1) for the factorial.
    """
    c = _as_counts(cases)
    R = np.asarray(R, dtype=float)
    if R.shape != c.shape:
        raise EpimobError("R must have one value per day")
    lam = infection_pressure(c, gt)
    use = lam > 0
    r = R[use]
    if np.any(~(r > 0)):
        raise EpimobError("R_t must be positive on evaluated days")
    mu = r * lam[use]
    cu = c[use]
    return float(np.sum(special.xlogy(cu, mu) - mu - special.gammaln(cu + 1)))


def _log_target(u, counts, lam):
    # log posterior on u = log R including the Jacobian e^u of the transform
    return (counts + 1.0) * u - np.exp(u) * lam


def estimate_rt(cases, gt: GenerationTimeDist, cfg: McmcConfig | None = None, days=None) -> RtPosterior:
    """Sample the per-day posterior of R_t.

    Parameters
    ----------
    cases : CaseSeries
    gt : GenerationTimeDist
    cfg : McmcConfig, optional
    days : iterable of int, optional
        Restrict sampling to these day indices (others are left undefined).

    Returns
    -------
    RtPosterior
        Days with Λ(t) = 0 are undefined. Days with Λ(t) = 0 but C(t) > 0 are
        reported in ``warnings`` as unexplained (imported) cases.
    """
    cfg = cfg or McmcConfig()
    if not isinstance(cases, CaseSeries):
        cases = CaseSeries("unit", None, cases)
    c = cases.counts
    n = len(c)
    if n <= gt.horizon:
        log.warning("case series (%d days) not longer than generation-time horizon (%d)", n, gt.horizon)
    lam = infection_pressure(c, gt)
    active = lam > 0
    if days is not None:
        mask = np.zeros(n, dtype=bool)
        mask[list(days)] = True
        active &= mask
    warnings = [
        f"day {t}: {c[t]:g} cases with zero infection pressure; excluded"
        for t in np.flatnonzero((lam <= 0) & (c > 0))
    ]
    idx = np.flatnonzero(active)
    n_keep = len(range(cfg.burn_in, cfg.iterations, cfg.thinning))
    samples = np.full((n, n_keep), np.nan)
    acceptance = np.full(n, np.nan)
    if idx.size:
        draws, acc = _run_chains(c[idx], lam[idx], idx, cfg)
        samples[idx] = draws
        acceptance[idx] = acc
        for t, a in zip(idx, acc):
            if not 0.1 <= a <= 0.9:
                warnings.append(f"day {t}: acceptance rate {a:.3f} outside [0.1, 0.9]")
    if warnings:
        log.warning("%s: %d diagnostics, first: %s", cases.unit_id, len(warnings), warnings[0])
    samples.setflags(write=False)
    return RtPosterior(cases.unit_id, cases.start_date, samples, acceptance, lam, tuple(warnings))


def _run_chains(counts, lam, day_index, cfg: McmcConfig):
    m = len(counts)
    scale = np.full(m, cfg.proposal_sd)
    if cfg.adapt_scale:
        # log R posterior sd is about 1/sqrt(C+1); 2.4 sd is the 1-d optimal step
        scale = np.minimum(scale, 2.4 / np.sqrt(counts + 1.0))
    steps = np.empty((m, cfg.iterations))
    logu = np.empty((m, cfg.iterations))
    for j, t in enumerate(day_index):
        rng = np.random.default_rng([cfg.rng_seed, int(t)])
        steps[j] = rng.standard_normal(cfg.iterations) * scale[j]
        logu[j] = np.log(rng.random(cfg.iterations))
    u_max = np.log(cfg.r_max)
    # start at the conditional mode, clipped into the prior support
    u = np.log(np.clip((counts + 1.0) / lam, 1e-8, cfg.r_max))
    cur = _log_target(u, counts, lam)
    keep = np.empty((m, len(range(cfg.burn_in, cfg.iterations, cfg.thinning))))
    accepted = np.zeros(m)
    k = 0
    for i in range(cfg.iterations):
        prop = u + steps[:, i]
        prop_lp = _log_target(prop, counts, lam)
        ok = (prop <= u_max) & (logu[:, i] < prop_lp - cur)
        u = np.where(ok, prop, u)
        cur = np.where(ok, prop_lp, cur)
        if i >= cfg.burn_in:
            accepted += ok
            if (i - cfg.burn_in) % cfg.thinning == 0:
                keep[:, k] = u
                k += 1
    return np.exp(keep), accepted / (cfg.iterations - cfg.burn_in)


def rt_mean_series(post: RtPosterior, ma_window: int = 7) -> DailySeries:
    """Centered moving average of posterior means; undefined days are skipped."""
    return DailySeries(
        post.unit_id,
        post.start_date,
        centered_moving_average(post.mean, ma_window),
        "rt_mean",
    )
