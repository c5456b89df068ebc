"""Synthetic data with known answers for end-to-end validation.

Generators here are pure functions of their parameters and seed; every
random draw comes from ``numpy.random.default_rng`` streams keyed on
``(rng_seed, stream id)`` so that units and stages do not share state.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EpimobError, ExplosiveEpidemicError
from .fda.basis import BSplineBasis, SmoothedCurve, build_basis, quadrature_nodes
from .rt_estimator import CaseSeries, GenerationTimeDist, discretize_generation_time, infection_pressure
from .series import DailySeries

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

DEFAULT_START = dt.date(2020, 2, 1)
LN2 = np.log(2.0)

# stream ids for derived generators
_CASES, _MOBILITY, _ENSEMBLE = 0, 1, 2


def logistic_10_90_width(half_life: float) -> float:
    """Days for the switch to go from 10% to 90% of its full change."""
    return 2 * np.log(9.0) * half_life / LN2


@dataclass(frozen=True)
class MobilityRegime:
    """Pre level, lockdown switch and optional reopening of a mobility trace.

    The level relative to ``pre_level`` is

        bump(t) * (1 - (1 - post_fraction) L(t - switch_day)
                     + (reopen_fraction - post_fraction) L(t - reopen_day))

    with ``L(x) = 1 / (1 + 2^(-x / half_life))``, so ``half_life`` is the
    time for the remaining gap to the new level to halve, far from the
    centre. ``bump(t) = 1 + bump_height exp(-(t - bump_day)² / (2 bump_width²))``
    adds a symmetric peak of activity; its maximum does not move under
    symmetric smoothing, which makes it a clean marker for lag estimation.
    """

    pre_level: float = 1000.0
    post_fraction: float = 0.4
    switch_day: float = 40.0
    half_life: float = 1.1
    bump_height: float = 0.0
    bump_day: float = 0.0
    bump_width: float = 4.0
    reopen_day: float | None = None
    reopen_fraction: float | None = None
    weekly_amplitude: float = 0.0
    noise_sd: float = 0.0

    def __post_init__(self):
        if not self.pre_level > 0:
            raise EpimobError("pre_level must be positive")
        if not 0 < self.post_fraction <= 1:
            raise EpimobError("post_fraction must lie in (0, 1]")
        if not self.half_life > 0:
            raise EpimobError("half_life must be positive")
        if self.bump_height < 0 or not self.bump_width > 0:
            raise EpimobError("bump_height must be >= 0 and bump_width > 0")
        if (self.reopen_day is None) != (self.reopen_fraction is None):
            raise EpimobError("reopen_day and reopen_fraction go together")
        if self.reopen_fraction is not None and not self.reopen_fraction > 0:
            raise EpimobError("reopen_fraction must be positive")
        if self.weekly_amplitude < 0 or self.noise_sd < 0:
            raise EpimobError("weekly_amplitude and noise_sd must be >= 0")

    def _switch(self, x):
        return 1.0 / (1.0 + np.exp2(-x / self.half_life))

    def relative_level(self, t) -> np.ndarray:
        """Noise-free level over ``pre_level`` without weekly modulation."""
        t = np.asarray(t, dtype=float)
        frac = 1 - (1 - self.post_fraction) * self._switch(t - self.switch_day)
        if self.reopen_day is not None:
            frac = frac + (self.reopen_fraction - self.post_fraction) * self._switch(t - self.reopen_day)
        if self.bump_height > 0:
            frac = frac * (1 + self.bump_height * np.exp(-((t - self.bump_day) ** 2) / (2 * self.bump_width**2)))
        return frac

    def level(self, t) -> np.ndarray:
        return self.pre_level * self.relative_level(t)


@dataclass(frozen=True)
class Scenario:
    """A prescribed epidemic and mobility trajectory.

    ``r_knots`` are (day, R) pairs read as a step function (``r_kind="step"``)
    or interpolated linearly (``"linear"``). ``seed_cases`` are imported
    cases on consecutive days from ``seed_start``; they replace the renewal
    draw on those days.
    """

    n_days: int = 150
    r_knots: tuple = ((0, 2.0), (60, 0.7))
    r_kind: str = "step"
    seed_cases: tuple = (50.0,) * 10
    seed_start: int = 0
    gt_shape: float = 1.87
    gt_rate: float = 0.28
    mobility: MobilityRegime = field(default_factory=MobilityRegime)
    lag: int = 13
    case_cap: float = 1e7
    rng_seed: int = 0
    unit_id: str = "synthetic"
    start_date: dt.date = DEFAULT_START

    def __post_init__(self):
        if self.n_days < 2:
            raise EpimobError("n_days must be >= 2")
        if self.r_kind not in ("step", "linear"):
            raise EpimobError("r_kind must be 'step' or 'linear'")
        knots = tuple((float(d), float(r)) for d, r in self.r_knots)
        if not knots:
            raise EpimobError("r_knots must not be empty")
        days = [d for d, _ in knots]
        if days != sorted(days) or min(days) < 0 or max(days) >= self.n_days:
            raise EpimobError("r_knots days must be sorted and inside the domain")
        if any(r < 0 for _, r in knots):
            raise EpimobError("R values must be >= 0")
        object.__setattr__(self, "r_knots", knots)
        seeds = tuple(float(c) for c in self.seed_cases)
        if not any(c > 0 for c in seeds):
            raise EpimobError("at least one seed day needs cases > 0")
        if self.seed_start < 0 or self.seed_start + len(seeds) > self.n_days:
            raise EpimobError("seed days must lie inside the domain")
        object.__setattr__(self, "seed_cases", seeds)
        sw = self.mobility.switch_day
        if not 0 <= sw < self.n_days:
            raise EpimobError("mobility switch must lie inside the domain")
        if self.mobility.reopen_day is not None and not sw <= self.mobility.reopen_day < self.n_days:
            raise EpimobError("reopening must follow the switch inside the domain")
        if self.lag < 0:
            raise EpimobError("lag must be >= 0")

    def r_trajectory(self) -> np.ndarray:
        t = np.arange(self.n_days, dtype=float)
        days = np.array([d for d, _ in self.r_knots])
        vals = np.array([r for _, r in self.r_knots])
        if self.r_kind == "linear":
            return np.interp(t, days, vals)
        idx = np.searchsorted(days, t, side="right") - 1
        return vals[np.clip(idx, 0, None)]

    def generation_time(self) -> GenerationTimeDist:
        return discretize_generation_time(self.gt_shape, self.gt_rate)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        mob = d.pop("mobility", {})
        if "start_date" in d and isinstance(d["start_date"], str):
            d["start_date"] = dt.date.fromisoformat(d["start_date"])
        for key in ("r_knots", "seed_cases"):
            if key in d:
                d[key] = tuple(tuple(v) if isinstance(v, list) else v for v in d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise EpimobError(f"unknown scenario keys: {sorted(unknown)}")
        unknown = set(mob) - set(MobilityRegime.__dataclass_fields__)
        if unknown:
            raise EpimobError(f"unknown mobility keys: {sorted(unknown)}")
        return cls(mobility=MobilityRegime(**mob), **d)

    @classmethod
    def from_toml(cls, source) -> "Scenario":
        """Read a scenario from a TOML path or string.

        Top-level keys (or a ``[scenario]`` table) map to fields; the
        ``[mobility]`` table maps to :class:`MobilityRegime`.
        """
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
            text = Path(source).read_text()
        else:
            text = source
        data = tomllib.loads(text)
        body = dict(data.get("scenario", {}))
        body.update({k: v for k, v in data.items() if k not in ("scenario", "mobility")})
        if "mobility" in data:
            body["mobility"] = data["mobility"]
        return cls.from_dict(body)


def simulate_renewal(scenario: Scenario, deterministic: bool = False, r=None) -> CaseSeries:
    """Run the renewal process forward.

    ``C(t) ~ Poisson(R(t) Λ(t))`` outside seed days, or ``C(t) = R(t) Λ(t)``
    in deterministic mode. ``r`` overrides the scenario's R trajectory.
    """
    gt = scenario.generation_time()
    R = scenario.r_trajectory() if r is None else np.asarray(r, dtype=float)
    if R.shape != (scenario.n_days,):
        raise EpimobError("R trajectory must have one value per day")
    rng = np.random.default_rng([scenario.rng_seed, _CASES])
    n = scenario.n_days
    C = np.zeros(n)
    seed_end = scenario.seed_start + len(scenario.seed_cases)
    C[scenario.seed_start:seed_end] = scenario.seed_cases
    for t in range(scenario.seed_start, n):
        if scenario.seed_start <= t < seed_end:
            continue
        mean = R[t] * infection_pressure(C, gt, t) if t >= 1 else 0.0
        if mean > scenario.case_cap:
            raise ExplosiveEpidemicError(
                f"expected cases {mean:.3g} on day {t} exceed the cap {scenario.case_cap:g}; "
                "use smaller R or a shorter domain"
            )
        C[t] = mean if deterministic else rng.poisson(mean)
    return CaseSeries(scenario.unit_id, scenario.start_date, C, raw=True)


def simulate_mobility(scenario: Scenario) -> DailySeries:
    """Daily mobility trace with weekly modulation and multiplicative noise."""
    reg = scenario.mobility
    t = np.arange(scenario.n_days, dtype=float)
    m = reg.level(t)
    if reg.weekly_amplitude:
        # weekend dip: lowest on day 6 of each week counted from the start
        m = m * (1 - reg.weekly_amplitude * (np.cos(2 * np.pi * (t - 6) / 7) + 1) / 2)
    if reg.noise_sd:
        rng = np.random.default_rng([scenario.rng_seed, _MOBILITY])
        m = m * np.clip(1 + reg.noise_sd * rng.standard_normal(len(t)), 0, None)
    return DailySeries(scenario.unit_id, scenario.start_date, m, "mobility")


def ridge_beta(lag: float = 13.0, width_sq: float = 8.0):
    """β₀(s, t) = exp(-(t - s - lag)² / width_sq)."""

    def beta(s, t):
        return np.exp(-((np.asarray(t) - np.asarray(s) - lag) ** 2) / width_sq)

    return beta


def project_surface(beta0, basis_s: BSplineBasis, basis_t: BSplineBasis, n_per_piece: int = 8) -> np.ndarray:
    """L2 projection of a bivariate function onto the tensor basis (K_s x K_t)."""
    xs, ws = quadrature_nodes([basis_s.breakpoints], *basis_s.domain, n_per_piece)
    xt, wt = quadrature_nodes([basis_t.breakpoints], *basis_t.domain, n_per_piece)
    F = beta0(xs[:, None], xt[None, :])
    Ps, Pt = basis_s.evaluate(xs), basis_t.evaluate(xt)
    rhs = (Ps * ws[:, None]).T @ F @ (Pt * wt[:, None])
    Gs, Gt = basis_s.gram(0), basis_t.gram(0)
    return np.linalg.solve(Gs, np.linalg.solve(Gt, rhs.T).T)


@dataclass(frozen=True)
class FoFDataset:
    xs: list
    ys: list
    ys_clean: list
    beta_coef: np.ndarray
    basis_s: BSplineBasis
    basis_t: BSplineBasis


def make_fof_dataset(
    n_units: int = 20,
    domain=(0.0, 30.0),
    beta0=None,
    noise_sd: float = 0.1,
    seed: int = 0,
    n_basis: int = 10,
    x_mean: float = 1.0,
) -> FoFDataset:
    """Curves with ``y_i(t) = ∫ β₀(s,t) x_i(s) ds + noise`` and a known β₀.

    β₀ (default: the lag-13 ridge) is first projected onto the cubic tensor
    basis of size ``n_basis``; with x_i and y_i on the same bases the
    integral is then exact. x_i has i.i.d. N(x_mean, 1) coefficients and the
    noise i.i.d. N(0, noise_sd²) coefficients on the t basis.
    """
    if n_units < 1 or noise_sd < 0:
        raise EpimobError("need n_units >= 1 and noise_sd >= 0")
    beta0 = ridge_beta() if beta0 is None else beta0
    basis = build_basis(domain, n_basis)
    B = project_surface(beta0, basis, basis)
    rng = np.random.default_rng([seed, _ENSEMBLE])
    X = x_mean + rng.standard_normal((n_units, n_basis))
    Q = X @ basis.gram(0)
    Yc = Q @ B
    E = noise_sd * rng.standard_normal((n_units, n_basis))
    xs = [SmoothedCurve(basis, X[i], basis.domain, f"u{i:02d}") for i in range(n_units)]
    clean = [SmoothedCurve(basis, Yc[i], basis.domain, f"u{i:02d}") for i in range(n_units)]
    ys = [c.with_coef(c.coef + E[i]) for i, c in enumerate(clean)]
    return FoFDataset(xs, ys, clean, B, basis, basis)


def make_shifted_set(template: SmoothedCurve, shifts, noise: float = 0.0, seed: int = 0) -> list[SmoothedCurve]:
    """Copies of ``template`` translated by ``shifts``, optionally with noise.

    Noise is Gaussian on the daily grid with sd ``noise`` times the template
    maximum; noisy copies are refit by least squares on the shifted basis.
    """
    out = []
    _, peak = template.maximum()
    for i, d in enumerate(shifts):
        c = template.shifted(float(d))
        if noise > 0:
            rng = np.random.default_rng([seed, i])
            t = c.daily_grid()
            y = c(t) + noise * abs(peak) * rng.standard_normal(len(t))
            coef, *_ = np.linalg.lstsq(c.basis.evaluate(t), y, rcond=None)
            c = c.with_coef(coef)
        out.append(c)
    return out


@dataclass(frozen=True)
class EnsembleUnit:
    scenario: Scenario
    population: int
    mobility: DailySeries
    rt_true: np.ndarray
    cases: CaseSeries

    @property
    def unit_id(self) -> str:
        return self.scenario.unit_id


@dataclass(frozen=True)
class EnsembleConfig:
    """Knobs of the synthetic epi-mob ensemble.

    Transmission follows mobility with a fixed lag,
    ``R_i(t) = r_intercept + r_slope * m̄_i(t - lag) / ref_level``, where m̄
    is the unit's noise-free mobility level. Units differ in introduction
    day, switch timing, levels and population.
    """

    n_units: int = 20
    n_days: int = 244
    lag: int = 13
    switch_day: float = 70.0
    switch_jitter: float = 2.0
    reopen_day: float = 123.0
    ref_level: float = 1000.0
    level_spread: float = 0.05
    post_range: tuple = (0.3, 0.5)
    reopen_range: tuple = (0.6, 0.7)
    bump_height: float = 0.25
    bump_lead: float = 14.0
    bump_width: float = 4.0
    half_life: float = 1.1
    r_intercept: float = 0.35
    r_slope: float = 1.25
    intro_range: tuple = (0, 30)
    seed_cases: tuple = (10.0, 10.0, 10.0)
    weekly_amplitude: float = 0.1
    mobility_noise: float = 0.03
    population_range: tuple = (2.0e6, 4.0e6)
    start_date: dt.date = dt.date(2020, 1, 1)
    case_cap: float = 1e7


def make_epimob_ensemble(seed: int = 0, config: EnsembleConfig | None = None) -> list[EnsembleUnit]:
    """Simulate mobility, prescribed R and cases for a set of units."""
    cfg = config or EnsembleConfig()
    rng = np.random.default_rng([seed, _ENSEMBLE])
    units = []
    for i in range(cfg.n_units):
        unit_seed = int(rng.integers(2**31))
        level = cfg.ref_level * np.exp(rng.uniform(-cfg.level_spread, cfg.level_spread))
        regime = MobilityRegime(
            pre_level=level,
            post_fraction=rng.uniform(*cfg.post_range),
            switch_day=cfg.switch_day + rng.uniform(-cfg.switch_jitter, cfg.switch_jitter),
            half_life=cfg.half_life,
            bump_height=cfg.bump_height,
            bump_day=cfg.switch_day - cfg.bump_lead,
            bump_width=cfg.bump_width,
            reopen_day=cfg.reopen_day + rng.uniform(-cfg.switch_jitter, cfg.switch_jitter),
            reopen_fraction=rng.uniform(*cfg.reopen_range),
            weekly_amplitude=cfg.weekly_amplitude,
            noise_sd=cfg.mobility_noise,
        )
        intro = int(rng.integers(cfg.intro_range[0], cfg.intro_range[1] + 1))
        population = int(rng.uniform(*cfg.population_range))
        scen = Scenario(
            n_days=cfg.n_days,
            r_knots=((0, 1.0),),
            seed_cases=cfg.seed_cases,
            seed_start=intro,
            mobility=regime,
            lag=cfg.lag,
            case_cap=cfg.case_cap,
            rng_seed=unit_seed,
            unit_id=f"R{i + 1:02d}",
            start_date=cfg.start_date,
        )
        t = np.arange(cfg.n_days, dtype=float)
        r = cfg.r_intercept + cfg.r_slope * regime.level(t - cfg.lag) / cfg.ref_level
        r = np.clip(r, 0, None)
        units.append(
            EnsembleUnit(
                scenario=scen,
                population=population,
                mobility=simulate_mobility(scen),
                rt_true=r,
                cases=simulate_renewal(scen, r=r),
            )
        )
    return units


def scenario_with(scenario: Scenario, **changes) -> Scenario:
    return replace(scenario, **changes)
