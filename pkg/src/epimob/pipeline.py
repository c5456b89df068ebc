"""Pipeline stages operating on a run folder.

Every stage reads its prerequisites from fixed places under a run root
(overridable per call), writes its outputs atomically and records a
manifest in ``manifests/<stage>.json``. Layout::

    cases/<unit>.csv        simulate, or supplied
    mobility/<unit>.csv     flows or simulate
    truth/<unit>.csv        simulate (prescribed R)
    population.csv          unit_id,population
    rt/<unit>.csv           posterior summaries
    rt_mean/<unit>.csv      moving-average posterior mean
    fda/                    curves, FCC, registration
    fof/                    surface, lag slice, summary
    delay/                  delay table, association fit
    report/                 SVG charts and the CSVs they plot
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, fof as fofmod, io, od_pipeline, rt_estimator, svg, synth
from .errors import EpimobError, MissingPrerequisiteError, ParameterError
from .fda import (
    DEFAULT_LAMBDA_GRID,
    SmoothedCurve,
    build_basis,
    first_fcc,
    normalize_curve,
    project_fcc,
    register_to_fcc,
    smooth_all,
)
from .fda.registration import DEFAULT_CAP, DEFAULT_STEP
from .series import DailySeries

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

CASES, MOBILITY, TRUTH, RT, RT_MEAN = "cases", "mobility", "truth", "rt", "rt_mean"
FDA, FOF, DELAY, REPORT, MANIFESTS = "fda", "fof", "delay", "report", "manifests"
POPULATION = "population.csv"

DEFAULT_BASELINE = (dt.date(2020, 2, 1), dt.date(2020, 2, 14))


@dataclass
class StageResult:
    stage: str
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _check(cond, message):
    if not cond:
        raise ParameterError(message)


def _finish(root: Path, stage: str, params: dict, inputs, outputs, summary=None) -> StageResult:
    name = stage.replace(" ", "_")
    manifest = io.write_manifest(root / MANIFESTS / f"{name}.json", stage, params, inputs, outputs, root)
    return StageResult(stage, [*outputs, manifest], summary or {})


def _series_files(directory: Path):
    return sorted(Path(directory).glob("*.csv"))


def _unit_seed(seed: int, unit_id: str) -> int:
    return (int(seed) << 32) | zlib.crc32(unit_id.encode())


def read_population(path) -> dict:
    """``unit_id -> population`` from any CSV with those two columns."""
    path = io.require(path, "population table")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"unit_id", "population"} <= set(reader.fieldnames):
            raise EpimobError(f"{path}: expected columns unit_id,population")
        return {row["unit_id"]: float(row["population"]) for row in reader}


# -- simulate -----------------------------------------------------------------


def _ensemble_config(table: dict) -> synth.EnsembleConfig:
    table = dict(table)
    if isinstance(table.get("start_date"), str):
        table["start_date"] = dt.date.fromisoformat(table["start_date"])
    for k, v in list(table.items()):
        if isinstance(v, list):
            table[k] = tuple(v)
    unknown = set(table) - set(synth.EnsembleConfig.__dataclass_fields__)
    if unknown:
        raise ParameterError(f"unknown ensemble keys: {sorted(unknown)}")
    return synth.EnsembleConfig(**table)


def simulate(root, scenario_path, seed: int | None = None, deterministic: bool = False) -> StageResult:
    """Write synthetic cases, mobility and true R for a scenario file.

    A file with an ``[ensemble]`` table produces the multi-unit epi-mob
    ensemble (plus ``population.csv``); otherwise a single scenario is run.
    """
    root = Path(root)
    scenario_path = io.require(scenario_path, "scenario file")
    data = tomllib.loads(Path(scenario_path).read_text())
    outputs = []
    if "ensemble" in data:
        cfg = _ensemble_config(data["ensemble"])
        run_seed = int(seed if seed is not None else data.get("seed", 0))
        units = synth.make_epimob_ensemble(run_seed, cfg)
        for u in units:
            uid = u.unit_id
            outputs.append(io.write_series(root / CASES / f"{uid}.csv", u.cases.to_daily()))
            outputs.append(io.write_series(root / MOBILITY / f"{uid}.csv", u.mobility))
            truth = DailySeries(uid, u.cases.start_date, u.rt_true, "rt_mean")
            outputs.append(io.write_series(root / TRUTH / f"{uid}.csv", truth))
        rows = [(u.unit_id, u.population) for u in units]
        outputs.append(io.atomic_write_text(root / POPULATION, io.csv_text(["unit_id", "population"], rows)))
        params = {"mode": "ensemble", "seed": run_seed, "n_units": cfg.n_units, "deterministic": False}
    else:
        scen = synth.Scenario.from_toml(Path(scenario_path))
        if seed is not None:
            scen = synth.scenario_with(scen, rng_seed=int(seed))
        cases = synth.simulate_renewal(scen, deterministic=deterministic)
        uid = scen.unit_id
        outputs.append(io.write_series(root / CASES / f"{uid}.csv", cases.to_daily()))
        outputs.append(io.write_series(root / MOBILITY / f"{uid}.csv", synth.simulate_mobility(scen)))
        truth = DailySeries(uid, scen.start_date, scen.r_trajectory(), "rt_mean")
        outputs.append(io.write_series(root / TRUTH / f"{uid}.csv", truth))
        params = {"mode": "scenario", "seed": scen.rng_seed, "deterministic": deterministic}
    return _finish(root, "simulate", params, [scenario_path], outputs)


# -- flows --------------------------------------------------------------------


def flows_ingest(
    root,
    input_path,
    hierarchy_path=None,
    level: str = "region",
    threshold: int = 15,
    input_level: str = "municipality",
    start: dt.date | None = None,
    end: dt.date | None = None,
) -> StageResult:
    """Ingest OD rows, aggregate to ``level`` and write one M_t series per unit."""
    root = Path(root)
    _check(threshold >= 0, "threshold must be >= 0")
    _check(level in od_pipeline.LEVELS and input_level in od_pipeline.LEVELS, f"level must be one of {od_pipeline.LEVELS}")
    input_path = io.require(input_path, "flows CSV")
    hierarchy = od_pipeline.SpatialHierarchy.from_csv(io.require(hierarchy_path, "hierarchy CSV")) if hierarchy_path else None
    window = (start, end) if start and end else None
    table = od_pipeline.read_flows_csv(input_path, threshold, level=input_level, hierarchy=hierarchy, window=window)
    if level != input_level:
        if hierarchy is None:
            raise ParameterError("aggregation needs --hierarchy")
        table = od_pipeline.aggregate(table, hierarchy, level)
    units = hierarchy.at_level(level) if hierarchy is not None else sorted(table.units)
    dates = table.dates
    if not dates:
        raise EpimobError("no flow records survived ingestion")
    s, e = start or dates[0], end or dates[-1]
    outputs = []
    notes = 0
    for uid in sorted(units):
        series = od_pipeline.mobility_series(table, uid, s, e, hierarchy)
        notes += len(series.notes)
        outputs.append(io.write_series(root / MOBILITY / f"{uid}.csv", series))
    rows = [(d, o, de, int(t)) for d, o, de, t in table.frame.itertuples(index=False, name=None)]
    outputs.append(io.atomic_write_text(root / "flows" / f"flows_{level}.csv", io.csv_text(od_pipeline.FLOW_COLUMNS, rows)))
    params = {"level": level, "input_level": input_level, "threshold": threshold, "start": s, "end": e}
    summary = {**table.manifest(), "outflow_only_notes": notes}
    outputs.append(io.write_json(root / "flows" / "summary.json", summary))
    inputs = [input_path] + ([hierarchy_path] if hierarchy_path else [])
    return _finish(root, "flows ingest", params, inputs, outputs, summary)


# -- rt -----------------------------------------------------------------------

RT_COLUMNS = ["date", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5", "acceptance"]


def rt(
    root,
    cases_dir=None,
    seed: int = 0,
    half_width: int = 4,
    ma_window: int = 7,
    smooth: bool = True,
    iterations: int = 12000,
    burn_in: int = 2000,
    thinning: int = 5,
    proposal_sd: float = 0.3,
    r_max: float = 12.0,
    gt_shape: float = 1.87,
    gt_rate: float = 0.28,
) -> StageResult:
    """Posterior R_t per unit from ``cases/``."""
    root = Path(root)
    _check(half_width >= 0, "half-width must be >= 0")
    _check(ma_window >= 1 and ma_window % 2 == 1, "moving-average window must be odd and >= 1")
    _check(iterations > burn_in >= 0, "iterations must exceed burn-in >= 0")
    _check(thinning >= 1, "thinning must be >= 1")
    _check(proposal_sd > 0 and r_max > 0, "proposal sd and r_max must be positive")
    _check(seed >= 0, "seed must be >= 0")
    _check(gt_shape > 0 and gt_rate > 0, "generation-time shape and rate must be positive")
    cases_dir = Path(cases_dir) if cases_dir else root / CASES
    serieses = io.read_series_dir(cases_dir, "cases")
    gt = rt_estimator.discretize_generation_time(gt_shape, gt_rate)
    outputs, warnings = [], {}
    for s in serieses:
        if s.missing.any():
            raise EpimobError(f"case series {s.unit_id!r} has missing days")
        cases = rt_estimator.CaseSeries.from_daily(s)
        if smooth:
            cases = rt_estimator.smooth_cases(cases, half_width)
        cfg = rt_estimator.McmcConfig(iterations, burn_in, thinning, proposal_sd, r_max, _unit_seed(seed, s.unit_id))
        post = rt_estimator.estimate_rt(cases, gt, cfg)
        rows = [(s.dates[t], *vals) for t, *vals in post.summary_rows()]
        outputs.append(io.atomic_write_text(root / RT / f"{s.unit_id}.csv", io.csv_text(RT_COLUMNS, rows)))
        outputs.append(io.write_series(root / RT_MEAN / f"{s.unit_id}.csv", rt_estimator.rt_mean_series(post, ma_window)))
        warnings[s.unit_id] = len(post.warnings)
    params = {
        "seed": seed,
        "half_width": half_width,
        "smooth_cases": smooth,
        "ma_window": ma_window,
        "iterations": iterations,
        "burn_in": burn_in,
        "thinning": thinning,
        "proposal_sd": proposal_sd,
        "r_max": r_max,
        "gt_shape": gt.shape,
        "gt_rate": gt.rate,
        "gt_mean": gt.mean,
    }
    return _finish(root, "rt", params, _series_files(cases_dir), outputs, {"diagnostic_counts": warnings})


# -- fda ----------------------------------------------------------------------


def _window(series: DailySeries, start, end) -> DailySeries:
    vals = np.full((end - start).days + 1, np.nan)
    lo, hi = max(start, series.start_date), min(end, series.end_date)
    if hi >= lo:
        i0 = (lo - start).days
        vals[i0 : i0 + (hi - lo).days + 1] = series.window(lo, hi)
    return DailySeries(series.unit_id, start, vals, series.kind)


def _mean_curve(curves) -> SmoothedCurve:
    c0 = curves[0]
    return c0.with_coef(np.mean([c.coef for c in curves], axis=0), "mean")


def _paired(rs, ms):
    ids_r = {s.unit_id for s in rs}
    ids_m = {s.unit_id for s in ms}
    if ids_r != ids_m:
        raise EpimobError(f"R_t and mobility units differ: {sorted(ids_r ^ ids_m)}")
    order = sorted(ids_r)
    by_r = {s.unit_id: s for s in rs}
    by_m = {s.unit_id: s for s in ms}
    return [by_r[u] for u in order], [by_m[u] for u in order]


def _curve_rows(curves, origin):
    rows = []
    for c in curves:
        for t in c.daily_grid():
            rows.append((c.unit_id, t, origin + dt.timedelta(days=float(t)), c(t)))
    return rows


def fda_smooth(
    root, start=None, end=None, n_basis: int = 32, rt_dir=None, mob_dir=None, lambda_grid=DEFAULT_LAMBDA_GRID, order: int = 4
) -> StageResult:
    """Smooth R_t and M_t on a common window with a shared GCV λ per set."""
    root = Path(root)
    _check(order >= 2, "order must be >= 2")
    _check(n_basis >= order, "n-basis must be >= order")
    rt_dir = Path(rt_dir) if rt_dir else root / RT_MEAN
    mob_dir = Path(mob_dir) if mob_dir else root / MOBILITY
    rs, ms = _paired(io.read_series_dir(rt_dir, "rt_mean"), io.read_series_dir(mob_dir, "mobility"))
    start = start or max(s.start_date for s in rs + ms)
    end = end or min(s.end_date for s in rs + ms)
    _check(end > start, "window end must follow its start")
    rs = [_window(s, start, end) for s in rs]
    ms = [_window(s, start, end) for s in ms]
    basis = build_basis((0.0, float((end - start).days)), n_basis, order)
    curves_r, lam_r = smooth_all(rs, basis, lambda_grid, origin=start)
    curves_m, lam_m = smooth_all(ms, basis, lambda_grid, origin=start)
    peak_r, _ = _mean_curve(curves_r).maximum()
    peak_m, _ = _mean_curve(curves_m).maximum()
    fda = root / FDA
    meta = {"origin": start, "n_basis": n_basis}
    outputs = [
        io.write_curves(fda / "curves_r.json", curves_r, {**meta, "lambda": lam_r}),
        io.write_curves(fda / "curves_m.json", curves_m, {**meta, "lambda": lam_m}),
        io.atomic_write_text(fda / "smooth_r.csv", io.csv_text(["unit", "t", "date", "value"], _curve_rows(curves_r, start))),
        io.atomic_write_text(fda / "smooth_m.csv", io.csv_text(["unit", "t", "date", "value"], _curve_rows(curves_m, start))),
    ]
    summary = {
        "origin": start,
        "end": end,
        "lambda_r": lam_r,
        "lambda_m": lam_m,
        "mean_peak_r": peak_r,
        "mean_peak_m": peak_m,
        "mean_peak_lag": peak_r - peak_m,
    }
    outputs.append(io.write_json(fda / "smooth_summary.json", summary))
    params = {"start": start, "end": end, "n_basis": n_basis, "order": order, "lambda_grid": list(map(float, lambda_grid))}
    inputs = _series_files(rt_dir) + _series_files(mob_dir)
    return _finish(root, "fda smooth", params, inputs, outputs, summary)


def _read_pair(root):
    fda = root / FDA
    body_r = io.read_json(fda / "curves_r.json")
    curves_r = io.read_curves(fda / "curves_r.json")
    curves_m = io.read_curves(fda / "curves_m.json")
    return dt.date.fromisoformat(body_r["origin"]), curves_r, curves_m


def fda_fcc(root) -> StageResult:
    """First functional covariance component of the max-normalized curves."""
    root = Path(root)
    origin, curves_r, curves_m = _read_pair(root)
    nr = [normalize_curve(c) for c in curves_r]
    nm = [normalize_curve(c) for c in curves_m]
    fcc = first_fcc(nr, nm)
    peak_r, _ = fcc.mean_r.maximum()
    peak_m, _ = fcc.mean_m.maximum()
    body = {
        "origin": origin,
        "unit_ids": list(fcc.unit_ids),
        "singular_value": fcc.singular_value,
        "explained": fcc.explained,
        "scores_r": fcc.scores_r,
        "scores_m": fcc.scores_m,
        "weight_r": fcc.weight_r.to_dict(),
        "weight_m": fcc.weight_m.to_dict(),
        "mean_r": fcc.mean_r.to_dict(),
        "mean_m": fcc.mean_m.to_dict(),
        "projection_mean_peak_r": peak_r,
        "projection_mean_peak_m": peak_m,
        "projection_mean_peak_lag": peak_r - peak_m,
    }
    fda = root / FDA
    rows = []
    for which, curves in (("r", nr), ("m", nm)):
        for c in curves:
            proj = project_fcc(c, fcc, which)
            rows += [(c.unit_id, which, t, proj(t)) for t in proj.daily_grid()]
    outputs = [
        io.write_json(fda / "fcc.json", body),
        io.atomic_write_text(fda / "fcc_projections.csv", io.csv_text(["unit", "which", "t", "value"], rows)),
    ]
    summary = {k: body[k] for k in ("explained", "projection_mean_peak_lag")}
    return _finish(root, "fda fcc", {}, [fda / "curves_r.json", fda / "curves_m.json"], outputs, summary)


def fda_register(root, cap: float = DEFAULT_CAP, step: float = DEFAULT_STEP) -> StageResult:
    """Shift each unit so its R curve matches its FCC projection."""
    root = Path(root)
    _check(cap >= 0, "cap must be >= 0")
    _check(step > 0, "step must be positive")
    origin, curves_r, curves_m = _read_pair(root)
    reg = register_to_fcc(curves_r, curves_m, cap, step)
    fda = root / FDA
    meta = {"origin": origin, "domain": list(reg.domain), "cap": cap, "step": step}
    rows = [(u, s) for u, s in reg.shifts.items()]
    outputs = [
        io.write_curves(fda / "registered_r.json", reg.r_curves, meta),
        io.write_curves(fda / "registered_m.json", reg.m_curves, meta),
        io.atomic_write_text(fda / "shifts.csv", io.csv_text(["unit", "shift_days"], rows)),
    ]
    summary = {"domain": list(reg.domain), "shifts": reg.shifts}
    return _finish(root, "fda register", {"cap": cap, "step": step}, [fda / "curves_r.json", fda / "curves_m.json"], outputs, summary)


# -- fof ----------------------------------------------------------------------


def read_covariates(path, unit_ids) -> np.ndarray:
    """Covariate matrix ordered like ``unit_ids`` from ``unit_id,<cov1>,<cov2>,...``."""
    path = io.require(path, "covariate CSV")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "unit_id" or len(rows[0]) < 3:
        raise EpimobError(f"{path}: expected header unit_id,<covariate>,<covariate>,...")
    table = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            table[row[0]] = [float(v) if v.strip() else np.nan for v in row[1:]]
        except ValueError as exc:
            raise EpimobError(f"{path}: line {lineno}: {exc}") from None
    missing = [u for u in unit_ids if u not in table]
    if missing:
        raise EpimobError(f"{path}: no covariates for {missing}")
    return np.array([table[u] for u in unit_ids])


def fof(
    root,
    lag: float = 13,
    level: float = 0.95,
    ks: int = 10,
    kt: int = 10,
    pc1_path=None,
    penalty: float | None = None,
) -> StageResult:
    """Function-on-function regression of registered R_t on registered M_t."""
    root = Path(root)
    _check(lag >= 0, "lag must be >= 0")
    _check(0 < level < 1, "level must lie in (0, 1)")
    _check(ks >= 4 and kt >= 4, "ks and kt must be >= 4")
    _check(penalty is None or penalty >= 0, "penalty must be >= 0")
    fda = root / FDA
    body = io.read_json(fda / "registered_r.json")
    ys = io.read_curves(fda / "registered_r.json")
    xs = io.read_curves(fda / "registered_m.json")
    inputs = [fda / "registered_r.json", fda / "registered_m.json"]
    summary = {"origin": body["origin"], "lag": lag, "level": level}
    if pc1_path:
        units = [c.unit_id for c in ys]
        pc = fofmod.compute_pc1(read_covariates(pc1_path, units))
        fit = fofmod.fit_fof_with_scalar(ys, xs, pc.scores, ks, kt, penalty)
        inputs.append(Path(pc1_path))
        summary["pc1"] = {"scores": dict(zip(units, pc.scores)), "loadings": pc.loadings, "explained": pc.explained}
    else:
        fit = fofmod.fit_fof(ys, xs, ks, kt, penalty)
    band = fofmod.confidence_band(fit, level)
    grid = fit.grid
    rows = [
        (s, t, band.beta[i, j], band.se[i, j], band.lower[i, j], band.upper[i, j])
        for i, s in enumerate(grid)
        for j, t in enumerate(grid)
    ]
    out = root / FOF
    outputs = [io.atomic_write_text(out / "surface.csv", io.csv_text(["s", "t", "beta", "se", "lo", "hi"], rows))]
    sl = fofmod.lag_slice(fit, lag, level)
    rows = list(zip(sl.s, sl.beta, sl.lower, sl.upper, sl.significant))
    outputs.append(io.atomic_write_text(out / "lag_slice.csv", io.csv_text(["s", "beta", "lo", "hi", "significant"], rows)))
    if fit.scalar_coef is not None:
        est, se = fit.scalar_effect(grid)
        c = fit.critical_value(level)
        rows = list(zip(grid, est, se, est - c * se, est + c * se))
        outputs.append(io.atomic_write_text(out / "pc_effect.csv", io.csv_text(["t", "beta_pc", "se", "lo", "hi"], rows)))
    summary.update(
        {
            "domain": list(fit.domain),
            "n_units": fit.n_units,
            "r2": fit.r2,
            "adjusted_r2": fit.adjusted_r2,
            "partial_r2": fit.partial_r2,
            "lambda": fit.lam,
            "effective_df": fit.effective_df,
            "residual_dof": fit.resid_dof,
            "significant_intervals": [list(iv) for iv in sl.significant_intervals()],
            "warnings": list(fit.warnings),
        }
    )
    outputs.append(io.write_json(out / "summary.json", summary))
    params = {"lag": lag, "level": level, "ks": ks, "kt": kt, "penalty": penalty, "pc1": bool(pc1_path)}
    return _finish(root, "fof", params, inputs, outputs, summary)


# -- delay --------------------------------------------------------------------


def delay(
    root,
    rt_dir=None,
    mob_dir=None,
    cases_dir=None,
    pop_path=None,
    as_of: dt.date = analysis.DEFAULT_AS_OF,
    baseline_start: dt.date = DEFAULT_BASELINE[0],
    baseline_end: dt.date = DEFAULT_BASELINE[1],
    mobility_ma: int = 7,
    fraction: float = analysis.REDUCTION_FRACTION,
) -> StageResult:
    """Delay in mobility reduction and cumulative incidence for every unit."""
    root = Path(root)
    _check(0 < fraction < 1, "fraction must lie in (0, 1)")
    _check(mobility_ma >= 1 and mobility_ma % 2 == 1, "mobility moving-average window must be odd and >= 1")
    _check(baseline_end >= baseline_start, "baseline window end precedes its start")
    rt_dir = Path(rt_dir) if rt_dir else root / RT_MEAN
    mob_dir = Path(mob_dir) if mob_dir else root / MOBILITY
    cases_dir = Path(cases_dir) if cases_dir else root / CASES
    pop_path = Path(pop_path) if pop_path else root / POPULATION
    rs, ms = _paired(io.read_series_dir(rt_dir, "rt_mean"), io.read_series_dir(mob_dir, "mobility"))
    cases = {s.unit_id: s for s in io.read_series_dir(cases_dir, "cases")}
    population = read_population(pop_path)
    records = []
    for r, m in zip(rs, ms):
        uid = r.unit_id
        if uid not in cases or uid not in population:
            raise EpimobError(f"unit {uid!r} lacks cases or population")
        base = od_pipeline.baseline_mobility(m, baseline_start, baseline_end)
        rec = analysis.delay_in_mobility_reduction(r, m, base, mobility_ma, fraction)
        inc, total = analysis.incidence_per_100k(rt_estimator.CaseSeries.from_daily(cases[uid]), population[uid], as_of)
        records.append(rec.with_incidence(inc, total))
    defined = [rec for rec in records if rec.defined]
    out = root / DELAY
    outputs = [io.atomic_write_text(out / "delay.csv", analysis.delay_table(records))]
    rows = [(rec.unit_id, rec.delay_days, rec.cumulative_incidence_per_100k) for rec in defined]
    outputs.append(io.atomic_write_text(out / "scatter.csv", io.csv_text(["unit", "delay_days", "incidence_100k"], rows)))
    fit = None
    if len(defined) >= 3:
        try:
            fit = analysis.pearson_fit([r[1] for r in rows], [r[2] for r in rows]).to_dict()
        except EpimobError as exc:
            log.warning("association fit skipped: %s", exc)
    summary = {"fit": fit, "n_defined": len(defined), "n_units": len(records)}
    outputs.append(io.write_json(out / "fit.json", summary))
    params = {
        "as_of": as_of,
        "baseline_start": baseline_start,
        "baseline_end": baseline_end,
        "mobility_ma": mobility_ma,
        "fraction": fraction,
    }
    inputs = _series_files(rt_dir) + _series_files(mob_dir) + _series_files(cases_dir) + [pop_path]
    return _finish(root, "delay", params, inputs, outputs, summary)


# -- report -------------------------------------------------------------------


def _read_csv_columns(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return rows


def _norm(v):
    v = np.asarray(v, float)
    peak = np.nanmax(v) if np.isfinite(v).any() else np.nan
    return v / peak if peak and np.isfinite(peak) and peak > 0 else np.full_like(v, np.nan)


def report(root) -> StageResult:
    """Charts (SVG) and the exact numbers they plot (CSV)."""
    root = Path(root)
    rs = io.read_series_dir(root / RT_MEAN, "rt_mean")
    ms = {s.unit_id: s for s in io.read_series_dir(root / MOBILITY, "mobility")}
    delay_csv = io.require(root / DELAY / "delay.csv", "delay table")
    fit_json = io.read_json(root / DELAY / "fit.json")
    cases = {s.unit_id: s for s in io.read_series_dir(root / CASES, "cases")} if (root / CASES).exists() else {}
    out = root / REPORT
    outputs, inputs = [], _series_files(root / RT_MEAN) + _series_files(root / MOBILITY) + [delay_csv]
    for r in rs:
        if r.unit_id not in ms:
            raise MissingPrerequisiteError(root / MOBILITY / f"{r.unit_id}.csv", "mobility series")
        m = _window(ms[r.unit_id], r.start_date, r.end_date).values
        c = _window(cases[r.unit_id], r.start_date, r.end_date).values if r.unit_id in cases else np.full(len(r), np.nan)
        day = np.arange(len(r))
        m_n, c_n = _norm(m), _norm(c)
        rows = list(zip(r.dates, day, m_n, c_n, r.values))
        base = out / "units" / r.unit_id
        outputs.append(io.atomic_write_text(base.with_suffix(".csv"), io.csv_text(["date", "day", "mobility_norm", "cases_norm", "rt_mean"], rows)))
        chart = svg.line_chart(
            day,
            {"M_t (normalized)": m_n, "cases (normalized)": c_n},
            {"R_t": r.values},
            title=f"{r.unit_id}: mobility, cases and R_t",
            xlabel=f"days since {r.start_date.isoformat()}",
            ylabel="fraction of maximum",
            ylabel_right="R_t",
        )
        outputs.append(io.atomic_write_text(base.with_suffix(".svg"), chart))
    scatter = [row for row in _read_csv_columns(delay_csv) if row["delay_days"].lstrip("-").isdigit()]
    xs = [float(row["delay_days"]) for row in scatter]
    ys = [float(row["incidence_100k"]) if row["incidence_100k"] else np.nan for row in scatter]
    units = [row["unit"] for row in scatter]
    outputs.append(io.atomic_write_text(out / "delay_scatter.csv", io.csv_text(["unit", "delay_days", "incidence_100k"], zip(units, xs, ys))))
    fit = fit_json.get("fit") or {}
    outputs.append(
        io.atomic_write_text(
            out / "delay_scatter.svg",
            svg.scatter_chart(
                xs,
                ys,
                units,
                fit.get("slope"),
                fit.get("intercept"),
                title=f"Delay vs incidence (r = {fit['r']:.2f})" if fit else "Delay vs incidence",
                xlabel="delay in mobility reduction (days)",
                ylabel="cases per 100k",
            ),
        )
    )
    inputs.append(root / DELAY / "fit.json")
    surface = root / FOF / "surface.csv"
    if surface.exists():
        rows = _read_csv_columns(surface)
        s = np.array(sorted({float(r["s"]) for r in rows}))
        t = np.array(sorted({float(r["t"]) for r in rows}))
        z = np.full((len(s), len(t)), np.nan)
        si = {v: i for i, v in enumerate(s)}
        ti = {v: i for i, v in enumerate(t)}
        for row in rows:
            z[si[float(row["s"])], ti[float(row["t"])]] = float(row["beta"])
        out_rows = [(float(r["s"]), float(r["t"]), float(r["beta"])) for r in rows]
        outputs.append(io.atomic_write_text(out / "beta_surface.csv", io.csv_text(["s", "t", "beta"], out_rows)))
        outputs.append(io.atomic_write_text(out / "beta_surface.svg", svg.heatmap(s, t, z, title="β(s, t)")))
        sl = _read_csv_columns(root / FOF / "lag_slice.csv")
        cols = {k: np.array([float(r[k]) if r[k] else np.nan for r in sl]) for k in ("s", "beta", "lo", "hi")}
        outputs.append(io.atomic_write_text(out / "lag_slice.csv", io.csv_text(["s", "beta", "lo", "hi"], zip(*cols.values()))))
        summary = io.read_json(root / FOF / "summary.json")
        outputs.append(
            io.atomic_write_text(
                out / "lag_slice.svg",
                svg.band_chart(
                    cols["s"], cols["beta"], cols["lo"], cols["hi"],
                    title=f"β(s, s + {summary.get('lag', '')}) with {summary.get('level', '')} band",
                    xlabel="s (days, registered)",
                    ylabel="β",
                ),
            )
        )
        inputs += [surface, root / FOF / "lag_slice.csv", root / FOF / "summary.json"]
    n_svg = sum(1 for p in outputs if str(p).endswith(".svg"))
    return _finish(root, "report", {}, inputs, outputs, {"charts": n_svg})
