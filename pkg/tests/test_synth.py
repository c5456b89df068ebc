import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epimob.errors import EpimobError, ExplosiveEpidemicError
from epimob.fda.basis import build_basis, SmoothedCurve
from epimob.fda.registration import estimate_shift
from epimob.fof import fit_fof
from epimob.rt_estimator import infection_pressure
from epimob.synth import (
    EnsembleConfig,
    MobilityRegime,
    Scenario,
    logistic_10_90_width,
    make_epimob_ensemble,
    make_fof_dataset,
    make_shifted_set,
    project_surface,
    ridge_beta,
    scenario_with,
    simulate_mobility,
    simulate_renewal,
)
import oracles

EARLY = MobilityRegime(switch_day=1.0)


def test_critical_stationarity_over_50_runs():
    seed_level, n_seed = 100.0, 40
    finals = []
    for k in range(50):
        sc = Scenario(n_days=60, r_knots=((0, 1.0),), seed_cases=(seed_level,) * n_seed, rng_seed=k)
        finals.append(simulate_renewal(sc).counts[n_seed:])
    means = np.array(finals).mean(axis=0)
    # Poisson with mean 100 per day; the process is a martingale so the
    # per-day spread grows slowly, bounded here by a generous sd of 20
    se = 20 / np.sqrt(50)
    assert np.all(np.abs(means - seed_level) < 3 * se)


def test_critical_stationarity_is_exact_in_deterministic_mode():
    sc = Scenario(n_days=80, r_knots=((0, 1.0),), seed_cases=(100.0,) * 40)
    c = simulate_renewal(sc, deterministic=True).counts
    np.testing.assert_allclose(c[40:], 100.0, rtol=1e-12)


def test_extinction_after_r_zero():
    d = 30
    sc = Scenario(n_days=100, r_knots=((0, 1.5), (d, 0.0)), seed_cases=(20.0,) * 5, rng_seed=3)
    c = simulate_renewal(sc).counts
    assert c[:d].sum() > 0
    assert np.all(c[d:] == 0)


@given(st.lists(st.floats(0, 3), min_size=30, max_size=30), st.integers(1, 5))
@settings(max_examples=30)
def test_deterministic_mode_recursion(r, n_seed):
    sc = Scenario(n_days=30, r_knots=((0, 1.0),), seed_cases=(7.0,) * n_seed, mobility=EARLY)
    c = simulate_renewal(sc, deterministic=True, r=np.array(r)).counts
    gt = sc.generation_time()
    for t in range(n_seed, 30):
        lam = oracles.pressure_loop(c, gt.pmf, t)
        assert c[t] == pytest.approx(r[t] * lam, rel=1e-12, abs=1e-12)


def test_pressure_matches_oracle_on_simulated_counts():
    c = simulate_renewal(Scenario(n_days=50, r_knots=((0, 1.3),))).counts
    gt = Scenario().generation_time()
    for t in (1, 10, 49):
        assert infection_pressure(c, gt, t) == pytest.approx(oracles.pressure_loop(c, gt.pmf, t), rel=1e-12)


def test_explosive_trajectory_is_hard_error():
    sc = Scenario(n_days=150, r_knots=((0, 6.0),), case_cap=1e5)
    with pytest.raises(ExplosiveEpidemicError, match="smaller R"):
        simulate_renewal(sc)


def test_bit_reproducible():
    sc = Scenario(rng_seed=11, mobility=MobilityRegime(noise_sd=0.05, weekly_amplitude=0.1))
    a, b = simulate_renewal(sc), simulate_renewal(sc)
    assert a.counts.tobytes() == b.counts.tobytes()
    assert simulate_mobility(sc).values.tobytes() == simulate_mobility(sc).values.tobytes()
    assert simulate_renewal(scenario_with(sc, rng_seed=12)).counts.tobytes() != a.counts.tobytes()
    e1, e2 = make_epimob_ensemble(4), make_epimob_ensemble(4)
    for u, v in zip(e1, e2):
        assert u.cases.counts.tobytes() == v.cases.counts.tobytes()
        assert u.mobility.values.tobytes() == v.mobility.values.tobytes()


# -- mobility ------------------------------------------------------------------


def test_mobility_levels():
    sc = Scenario(n_days=150, mobility=MobilityRegime(pre_level=2000.0, switch_day=60))
    m = simulate_mobility(sc).values
    assert m[0] == pytest.approx(2000.0, rel=1e-6)
    assert m[-1] == pytest.approx(0.4 * 2000.0, rel=0.01)


def test_transition_width_near_a_week():
    reg = MobilityRegime(switch_day=50)
    t = np.linspace(0, 100, 200001)
    frac = (1 - reg.relative_level(t)) / (1 - reg.post_fraction)
    width = t[np.argmax(frac >= 0.9)] - t[np.argmax(frac >= 0.1)]
    assert abs(width - 7) <= 2
    assert width == pytest.approx(logistic_10_90_width(reg.half_life), abs=1e-3)


def test_weekly_modulation_has_period_seven():
    sc = Scenario(n_days=140, mobility=MobilityRegime(weekly_amplitude=0.2, switch_day=130))
    m = simulate_mobility(sc).values[:100]
    np.testing.assert_allclose(m[7:], m[:-7], rtol=1e-6)
    assert m.min() == pytest.approx(800.0, rel=1e-3)


@pytest.mark.parametrize(
    "kwargs",
    [dict(post_fraction=0.0), dict(post_fraction=1.2), dict(half_life=0.0), dict(pre_level=-1.0), dict(reopen_day=80.0)],
)
def test_regime_invariants(kwargs):
    with pytest.raises(EpimobError):
        MobilityRegime(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(r_knots=((0, 2.0), (200, 1.0))),
        dict(seed_cases=(0.0, 0.0)),
        dict(mobility=MobilityRegime(switch_day=400)),
        dict(r_kind="spline"),
    ],
)
def test_scenario_invariants(kwargs):
    with pytest.raises(EpimobError):
        Scenario(**kwargs)


def test_scenario_toml_and_unknown_keys():
    sc = Scenario.from_toml('n_days = 90\nr_knots = [[0, 1.5], [30, 0.8]]\n[mobility]\nswitch_day = 20\n')
    assert sc.n_days == 90 and sc.r_knots == ((0.0, 1.5), (30.0, 0.8)) and sc.mobility.switch_day == 20
    with pytest.raises(EpimobError, match="bogus"):
        Scenario.from_toml("bogus = 1\n")
    with pytest.raises(EpimobError, match="colour"):
        Scenario.from_toml("[mobility]\ncolour = 1\n")


def test_linear_r_trajectory():
    sc = Scenario(n_days=11, r_knots=((0, 2.0), (10, 1.0)), r_kind="linear", seed_cases=(1.0,), mobility=EARLY)
    np.testing.assert_allclose(sc.r_trajectory(), np.linspace(2, 1, 11))


# -- FoF data ---------------------------------------------------------------------


def test_project_surface_reproduces_tensor_splines(rng):
    b = build_basis((0, 30), 8)
    B = rng.normal(size=(8, 8))

    def beta(s, t):
        return np.einsum("ij,...i,...j->...", B, b.evaluate(np.ravel(s))[:, None, :], b.evaluate(np.ravel(t))[None, :, :])

    np.testing.assert_allclose(project_surface(beta, b, b), B, atol=1e-9)


def test_fof_dataset_integral_is_exact():
    ds = make_fof_dataset(n_units=3, noise_sd=0.0, seed=2)
    s = np.linspace(0, 30, 3001)
    t = np.array([5.0, 17.3, 29.0])
    b = ds.basis_s
    beta = b.evaluate(s) @ ds.beta_coef @ b.evaluate(t).T
    from scipy import integrate

    for x, y in zip(ds.xs, ds.ys):
        direct = integrate.simpson(beta * x(s)[:, None], x=s, axis=0)
        np.testing.assert_allclose(y(t), direct, atol=1e-6)


def test_null_fof_r2_below_02():
    r2 = [fit_fof(d.ys, d.xs).r2 for d in (make_fof_dataset(beta0=lambda s, t: 0 * s * t, seed=k) for k in range(10))]
    assert np.mean(r2) < 0.2


def test_noise_free_fof_r2_is_one():
    ds = make_fof_dataset(noise_sd=0.0, seed=5)
    assert abs(fit_fof(ds.ys, ds.xs).r2 - 1) < 1e-6


def test_ridge_beta_peak():
    b = ridge_beta(13.0)
    assert b(0.0, 13.0) == 1.0 and b(5.0, 18.0) == 1.0 and b(0.0, 0.0) < 1e-9


# -- shifted sets -------------------------------------------------------------------


def template():
    b = build_basis((0, 120), 24)
    t = np.linspace(0, 120, 121)
    y = np.exp(-((t - 60) ** 2) / 200) + 0.5 * np.exp(-((t - 45) ** 2) / 50)
    coef, *_ = np.linalg.lstsq(b.evaluate(t), y, rcond=None)
    return SmoothedCurve(b, coef, b.domain, "tpl")


def test_zero_shift_gives_identical_copies():
    c = template()
    (copy,) = make_shifted_set(c, [0])
    np.testing.assert_array_equal(copy.coef, c.coef)
    assert copy.domain == c.domain


@pytest.mark.parametrize("noise, tol", [(0.0, 0.5), (0.05, 1.5)])
def test_shift_recovery(noise, tol):
    c = template()
    shifts = range(-10, 11)
    for d, curve in zip(shifts, make_shifted_set(c, shifts, noise=noise, seed=1)):
        # estimate_shift aligns curve(t - δ) to the target, so δ undoes d
        assert abs(-estimate_shift(curve, c) - d) <= tol


def test_large_shift_clamps_at_cap():
    c = template()
    (far,) = make_shifted_set(c, [30])
    assert estimate_shift(far, c, cap=20) == -20


# -- ensemble ----------------------------------------------------------------------


def test_ensemble_structure():
    units = make_epimob_ensemble(0)
    assert [u.unit_id for u in units] == [f"R{i:02d}" for i in range(1, 21)]
    cfg = EnsembleConfig()
    for u in units:
        assert u.rt_true.shape == (cfg.n_days,) and len(u.cases) == cfg.n_days
        assert 2e6 <= u.population <= 4e6
        t = np.arange(cfg.n_days) - cfg.lag
        np.testing.assert_allclose(u.rt_true, cfg.r_intercept + cfg.r_slope * u.scenario.mobility.level(t) / cfg.ref_level)
    assert len(make_epimob_ensemble(0, EnsembleConfig(n_units=120))) == 120
