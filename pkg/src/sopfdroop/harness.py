"""Forecast-case benchmark of adaptive versus fixed droop gains.

Per case: the SOPF is solved on the forecast, giving the droop station's
(P_ref, V_ref) and adaptive gain; when the realisation arrives, the droop
response of each strategy is compared against the perfect-knowledge
operating point of the station.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import special

from . import droop, pce, sopf, wind
from .errors import PreconditionError, SopfDroopError
from .grid import ConverterMode, NetworkModel
from .powerflow import PowerFlowSystem, solve_powerflow
from .wind import ZONES, Zone, ZoneConfig, ZoneStats

log = logging.getLogger(__name__)

STRATEGIES = {"Adaptive": None, "k=20": 20.0, "k=15": 15.0, "NoDroop": 0.0}
TIE_TOL_MW = 0.01


@dataclass(frozen=True)
class CaseStub:
    case_id: str
    zone: Zone
    forecast: tuple[float, ...]      # normalised forecasts per farm
    realized: tuple[float, ...]      # normalised realisations per farm


@dataclass(frozen=True)
class StrategyResult:
    k: float
    p_droop_mw: float
    v_real: float
    error_mw: float


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    zone: Zone
    forecast_mw: tuple[float, ...]
    realized_mw: tuple[float, ...]
    delta_mw: float
    status: str = "ok"
    k_tilde: float = float("nan")
    alpha_z: float = float("nan")
    k_opt: float = float("nan")
    p_ref_mw: float = float("nan")
    v_ref: float = float("nan")
    p_truth_mw: float = float("nan")
    strategies: Mapping[str, StrategyResult] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class BenchmarkOptions:
    degree: int = 2
    epsilon: float = 0.05
    margin_rule: sopf.MarginRule = sopf.MarginRule.CHEBYSHEV
    k_base: float = 20.0
    converter: Optional[str] = None       # droop station; first VoltageDroop converter by default
    open_loop: bool = False
    truth: str = "policy"                 # "policy" or "opf"
    references: str = "forecast"          # "forecast" or "mean"
    tie_tol_mw: float = TIE_TOL_MW
    strategies: Mapping[str, Optional[float]] = field(default_factory=lambda: dict(STRATEGIES))
    jobs: int = 1

    def __post_init__(self):
        if self.truth not in ("policy", "opf"):
            raise PreconditionError(f"unknown truth definition {self.truth!r}")
        if self.references not in ("forecast", "mean"):
            raise PreconditionError(f"unknown reference point {self.references!r}")
        if not self.strategies:
            raise PreconditionError("at least one strategy is required")


@dataclass(frozen=True)
class BenchmarkTable:
    strategies: tuple[str, ...]
    winner_rate: dict[tuple[str, str], float]      # (band, strategy) -> percent
    mean_error: dict[tuple[str, str], float]       # (band, strategy) -> MW
    ties: dict[str, int]                           # band -> cases with a shared minimum
    n_cases: dict[str, int]
    n_failed: dict[str, int]
    trends: dict[tuple[str, str], tuple[float, float]]


# ---------------------------------------------------------------------------
# scalar metrics
# ---------------------------------------------------------------------------

def disturbance_magnitude(pred, real) -> float:
    """Euclidean norm of realised minus predicted injections."""
    p = np.atleast_1d(np.asarray(pred, float))
    r = np.atleast_1d(np.asarray(real, float))
    if p.shape != r.shape:
        raise PreconditionError(f"length mismatch: {p.size} forecasts, {r.size} realisations")
    return float(np.linalg.norm(r - p))


def droop_power(p_ref: float, k: float, v_real: float, v_ref: float, base_power: float = 1.0) -> float:
    """Droop law P_ref - k (V_real - V_ref), returned in MW for ``base_power`` in MVA."""
    return float((p_ref - k * (v_real - v_ref)) * base_power)


def tracking_error(p_droop: float, p_truth: float) -> float:
    return abs(p_droop - p_truth)


def trend_fit(points: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Ordinary least-squares line through (delta, error) points."""
    arr = np.asarray(points, float).reshape(-1, 2)
    x, y = arr[:, 0], arr[:, 1]
    if arr.shape[0] < 2 or np.ptp(x) == 0:
        raise PreconditionError("trend fit needs at least two distinct abscissae")
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    return slope, float(ym - slope * xm)


# ---------------------------------------------------------------------------
# case generation
# ---------------------------------------------------------------------------

def case_seed(seed: int, zone_index: int, j: int) -> np.random.SeedSequence:
    """Independent stream per case, so results do not depend on execution order."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(zone_index, j))


def generate_cases(n_per_zone: int, stats: Mapping[Zone, ZoneStats], seed: int, *,
                   n_farms: int = 2, cfg: ZoneConfig = ZoneConfig()) -> list[CaseStub]:
    """Forecasts uniform on each zone's admissible range; realisations from the zone Beta law."""
    if n_per_zone < 1:
        raise PreconditionError("n_per_zone must be >= 1")
    out = []
    for zi, zone in enumerate(ZONES):
        lo, hi = wind.feasible_forecast_range(stats[zone], cfg)
        for j in range(n_per_zone):
            rng = np.random.default_rng(case_seed(seed, zi, j))
            fc = rng.uniform(lo, hi, n_farms)
            u = rng.random(n_farms)
            real = []
            for p, q in zip(fc, u):
                spec = wind.beta_spec(float(p), stats[zone])
                real.append(float(special.betaincinv(spec.alpha, spec.beta, q)))
            out.append(CaseStub(f"{zone.value[0]}{j + 1:02d}", zone, tuple(float(v) for v in fc), tuple(real)))
    return out


# ---------------------------------------------------------------------------
# per-case stages
# ---------------------------------------------------------------------------

def _droop_id(model: NetworkModel, options: BenchmarkOptions) -> str:
    if options.converter:
        return options.converter
    conv = model.droop_converters()
    if not conv:
        raise PreconditionError("model has no droop-controlled converter")
    return conv[0].id


def _pmax(model: NetworkModel) -> np.ndarray:
    return np.array([w.p_max for w in model.wind_farms])


@dataclass(frozen=True, eq=False)
class ForecastStage:
    stub: CaseStub
    status: str
    k_tilde: float = float("nan")
    p_ref: float = float("nan")
    v_ref: float = float("nan")
    ctrl_ref: Optional[np.ndarray] = None          # controls at the reference point (SOPF layout)
    policy_ctrl: Optional[np.ndarray] = None       # (K+1, m) control coefficients
    basis: Optional[pce.PceBasis] = None
    x_ref: Optional[np.ndarray] = None


def _policy_flow(model: NetworkModel, basis: pce.PceBasis, policy: np.ndarray, xi, w, x0):
    """Power flow at wind ``w`` with the recourse policy evaluated at germs ``xi``."""
    system = PowerFlowSystem(model, sopf.droop_modes(model))
    ctrl = basis.evaluate(np.asarray(xi, float)[None, :])[0] @ policy
    pf = solve_powerflow(model, w, system=system, ctrl=ctrl, x0=x0, raise_on_fail=True)
    return system, pf.state.x, ctrl


def forecast_stage(model: NetworkModel, stub: CaseStub, stats: Mapping[Zone, ZoneStats],
                   options: BenchmarkOptions) -> ForecastStage:
    """SOPF on the forecast: references, adaptive-gain ingredients and recourse policy.

    With ``options.references == "forecast"`` the droop references are the
    station's operating point when the wind equals the point forecast;
    ``"mean"`` uses the SOPF expectations instead.
    """
    cid = _droop_id(model, options)
    try:
        specs = [wind.beta_spec(p, stats[stub.zone]) for p in stub.forecast]
        basis = pce.build_basis(specs, options.degree)
        problem = sopf.SopfProblem(model, basis, options.epsilon, options.margin_rule)
        sol = sopf.solve_sopf(problem)
        if not sol.optimal:
            return ForecastStage(stub, f"failed: SOPF stalled (KKT {sol.kkt_residual:.2e})")
        ext = droop.extract_ktilde(sol, cid)
        policy = sol.states.controls.copy()
        x_mean = sol.states.coefficients[0]
        if options.references == "forecast":
            w_fc = np.asarray(stub.forecast) * _pmax(model)
            system, x_ref, ctrl_ref = _policy_flow(model, basis, policy, stub.forecast, w_fc, x_mean)
            p_ref = float(system.conv_power(x_ref, ctrl_ref, cid))
            v_ref = float(system.dc_voltage(x_ref, cid))
        else:
            x_ref, ctrl_ref = x_mean.copy(), policy[0].copy()
            p_ref, v_ref = sol.references[cid]
    except SopfDroopError as exc:
        return ForecastStage(stub, f"failed: {type(exc).__name__}: {exc}")
    return ForecastStage(stub, "ok", ext.k_tilde, p_ref, v_ref, ctrl_ref, policy, basis, x_ref)


def _truth_power(model: NetworkModel, fs: ForecastStage, w_real: np.ndarray, cid: str,
                 options: BenchmarkOptions) -> float:
    if options.truth == "opf":
        return sopf.solve_opf(model, w_real).conv_power(cid)
    # recourse policy of the SOPF evaluated at the realised germs; slack units balance
    system, x, ctrl = _policy_flow(model, fs.basis, fs.policy_ctrl, fs.stub.realized, w_real, fs.x_ref)
    return float(system.conv_power(x, ctrl, cid))


def _droop_response(model: NetworkModel, fs: ForecastStage, w_real: np.ndarray, cid: str,
                    k: float, open_loop: bool) -> tuple[float, float]:
    """(P_droop p.u., V_real) of the station for gain ``k``.

    Every other set-point stays where it was at the reference point.
    """
    mode = ConverterMode.CONST_PQ if open_loop else ConverterMode.VOLTAGE_DROOP
    system = PowerFlowSystem(model, {**sopf.droop_modes(model), cid: mode})
    ctrl = fs.ctrl_ref.copy()
    i = system.conv_index(cid)
    ctrl[system.ccp[i]], ctrl[system.ccv[i]] = fs.p_ref, fs.v_ref
    ctrl[system.cck[i]] = 0.0 if open_loop else k
    pf = solve_powerflow(model, w_real, system=system, ctrl=ctrl, x0=fs.x_ref, raise_on_fail=True)
    v_real = float(system.dc_voltage(pf.state.x, cid))
    return fs.p_ref - k * (v_real - fs.v_ref), v_real


def realization_stage(model: NetworkModel, fs: ForecastStage, alpha: Optional[float],
                      options: BenchmarkOptions) -> CaseRecord:
    stub = fs.stub
    pmax = _pmax(model)
    fc_mw = tuple(float(v) for v in model.to_mw(np.asarray(stub.forecast) * pmax))
    re_mw = tuple(float(v) for v in model.to_mw(np.asarray(stub.realized) * pmax))
    delta = disturbance_magnitude(fc_mw, re_mw)
    base = CaseRecord(stub.case_id, stub.zone, fc_mw, re_mw, delta, status=fs.status)
    if fs.status != "ok":
        return base
    cid = _droop_id(model, options)
    k_opt = droop.k_opt(fs.k_tilde, alpha) if alpha is not None else float("nan")
    rec = replace(base, k_tilde=fs.k_tilde, alpha_z=alpha if alpha is not None else float("nan"),
                  k_opt=k_opt, p_ref_mw=float(model.to_mw(fs.p_ref)), v_ref=fs.v_ref)
    w_real = np.asarray(stub.realized) * pmax
    try:
        p_truth = float(model.to_mw(_truth_power(model, fs, w_real, cid, options)))
        results = {}
        for name, gain in options.strategies.items():
            k = k_opt if gain is None else float(gain)
            if not np.isfinite(k):
                raise PreconditionError("adaptive strategy needs a calibration table")
            p, v = _droop_response(model, fs, w_real, cid, k, options.open_loop)
            p_mw = float(model.to_mw(p))
            results[name] = StrategyResult(k, p_mw, v, tracking_error(p_mw, p_truth))
    except SopfDroopError as exc:
        return replace(rec, status=f"failed: {type(exc).__name__}: {exc}")
    return replace(rec, p_truth_mw=p_truth, strategies=results)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def _forecast_job(args):
    return forecast_stage(*args)


def _realization_job(args):
    return realization_stage(*args)


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=1))


def forecast_all(model, cases, stats, options) -> list[ForecastStage]:
    return _map(_forecast_job, [(model, c, stats, options) for c in cases], options.jobs)


def calibration_from_stages(stages: Sequence[ForecastStage], k_base: float,
                            subset: Optional[int] = None) -> dict[Zone, droop.ZoneCalibration]:
    """Zone calibration from the successful forecast stages (optionally the first ``subset`` per zone)."""
    per_zone = {z: [] for z in ZONES}
    for fs in stages:
        if fs.status == "ok" and fs.k_tilde > 0:
            per_zone[fs.stub.zone].append(fs.k_tilde)
    if subset is not None:
        per_zone = {z: v[:subset] for z, v in per_zone.items()}
    return droop.calibrate_alpha(per_zone, k_base)


def run_benchmark(model: NetworkModel, cases: Sequence[CaseStub], stats: Mapping[Zone, ZoneStats],
                  options: BenchmarkOptions = BenchmarkOptions(),
                  calibration: Optional[Mapping[Zone, droop.ZoneCalibration]] = None,
                  stages: Optional[Sequence[ForecastStage]] = None
                  ) -> tuple[BenchmarkTable, list[CaseRecord]]:
    """Full protocol; without a calibration table the cases themselves calibrate the zones."""
    stages = list(stages) if stages is not None else forecast_all(model, cases, stats, options)
    needs_alpha = any(g is None for g in options.strategies.values())
    if calibration is None and needs_alpha:
        calibration = calibration_from_stages(stages, options.k_base)
    jobs = []
    for fs in stages:
        alpha = calibration[fs.stub.zone].alpha if calibration is not None else None
        jobs.append((model, fs, alpha, options))
    records = _map(_realization_job, jobs, options.jobs)
    for r in records:
        if not r.ok:
            log.warning("case %s excluded: %s", r.case_id, r.status)
    return summarize(records, options), records


def summarize(records: Sequence[CaseRecord], options: BenchmarkOptions = BenchmarkOptions()) -> BenchmarkTable:
    names = tuple(options.strategies)
    winner, mean_err, ties, n_cases, n_failed, trends = {}, {}, {}, {}, {}, {}
    for zone in ZONES:
        band = zone.value
        recs = [r for r in records if r.zone is zone]
        good = [r for r in recs if r.ok]
        n_cases[band] = len(good)
        n_failed[band] = len(recs) - len(good)
        wins = dict.fromkeys(names, 0.0)
        n_ties = 0
        for r in good:
            errs = np.array([r.strategies[s].error_mw for s in names])
            best = errs.min()
            tied = [s for s, e in zip(names, errs) if e - best < options.tie_tol_mw]
            if len(tied) > 1:
                n_ties += 1
            for s in tied:
                wins[s] += 1.0 / len(tied)
        ties[band] = n_ties
        for s in names:
            winner[(band, s)] = 100.0 * wins[s] / len(good) if good else float("nan")
            errs = [r.strategies[s].error_mw for r in good]
            mean_err[(band, s)] = float(np.mean(errs)) if errs else float("nan")
            pts = [(r.delta_mw, r.strategies[s].error_mw) for r in good]
            try:
                trends[(band, s)] = trend_fit(pts)
            except PreconditionError:
                trends[(band, s)] = (float("nan"), float("nan"))
    return BenchmarkTable(names, winner, mean_err, ties, n_cases, n_failed, trends)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def _slug(name: str) -> str:
    return name.lower().replace("=", "").replace(" ", "")


def _fmt(v) -> str:
    return repr(float(v))


def write_cases_csv(records: Sequence[CaseRecord], path, strategies: Sequence[str]) -> None:
    n_farms = max((len(r.forecast_mw) for r in records), default=2)
    head = (["case_id", "zone", "status"] + [f"forecast{i + 1}_mw" for i in range(n_farms)]
            + [f"realized{i + 1}_mw" for i in range(n_farms)]
            + ["delta_mw", "k_tilde", "alpha_z", "k_opt", "p_ref_mw", "v_ref", "p_truth_mw"])
    for s in strategies:
        t = _slug(s)
        head += [f"k_{t}", f"p_droop_{t}_mw", f"v_real_{t}", f"err_{t}_mw"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for r in records:
            row = [r.case_id, r.zone.value, r.status] + [_fmt(v) for v in r.forecast_mw] \
                + [_fmt(v) for v in r.realized_mw] \
                + [_fmt(v) for v in (r.delta_mw, r.k_tilde, r.alpha_z, r.k_opt, r.p_ref_mw, r.v_ref, r.p_truth_mw)]
            for s in strategies:
                sr = r.strategies.get(s)
                row += ([_fmt(sr.k), _fmt(sr.p_droop_mw), _fmt(sr.v_real), _fmt(sr.error_mw)]
                        if sr else ["nan"] * 4)
            w.writerow(row)


def kopt_by_zone(records: Sequence[CaseRecord]) -> list[dict]:
    rows = []
    for zone in ZONES:
        k = np.array([r.k_opt for r in records if r.zone is zone and r.ok and np.isfinite(r.k_opt)])
        if k.size:
            mean = float(k.mean())
            std = float(k.std(ddof=1)) if k.size > 1 else 0.0
            med = droop.lower_median(k)
            cv = 100.0 * std / mean if mean else float("nan")
        else:
            mean = std = med = cv = float("nan")
        rows.append({"zone": zone.value, "n": int(k.size), "mean": mean, "std": std,
                     "cv_percent": cv, "median": med})
    return rows


def emit_report(table: BenchmarkTable, records: Sequence[CaseRecord], out_dir) -> dict[str, Path]:
    """Write cases.csv, table.csv, kopt_by_zone.csv, trend.csv and summary.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("cases.csv", "table.csv", "kopt_by_zone.csv", "trend.csv", "summary.txt")}
    names = list(table.strategies)
    write_cases_csv(records, paths["cases.csv"], names)

    with open(paths["table.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["band", "metric"] + names)
        for zone in ZONES:
            b = zone.value
            if not records:
                continue
            w.writerow([b, "winner_rate_percent"] + [_fmt(table.winner_rate[(b, s)]) for s in names])
            w.writerow([b, "mean_error_mw"] + [_fmt(table.mean_error[(b, s)]) for s in names])

    kz = kopt_by_zone(records)
    with open(paths["kopt_by_zone.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone", "n", "mean", "std", "cv_percent", "median"])
        if records:
            for r in kz:
                w.writerow([r["zone"], r["n"], _fmt(r["mean"]), _fmt(r["std"]), _fmt(r["cv_percent"]),
                            _fmt(r["median"])])

    with open(paths["trend.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["band", "strategy", "slope", "intercept_mw"])
        if records:
            for zone in ZONES:
                for s in names:
                    slope, icpt = table.trends[(zone.value, s)]
                    w.writerow([zone.value, s, _fmt(slope), _fmt(icpt)])

    lines = [f"cases: {sum(table.n_cases.values())} solved, {sum(table.n_failed.values())} failed"]
    for zone in ZONES:
        b = zone.value
        if b not in table.n_cases:
            continue
        lines.append(f"[{b}] n={table.n_cases[b]} failed={table.n_failed[b]} "
                     f"ties={table.ties[b]} (ties < {TIE_TOL_MW} MW split equally)")
        for s in names:
            slope, _ = table.trends[(b, s)]
            lines.append(f"  {s:9s} winner {table.winner_rate[(b, s)]:6.1f}%  "
                         f"mean error {table.mean_error[(b, s)]:9.3f} MW  slope {slope:8.5f}")
    for r in kz:
        lines.append(f"k_opt {r['zone']}: n={r['n']} mean={r['mean']:.3f} std={r['std']:.3f} "
                     f"CV={r['cv_percent']:.2f}% median={r['median']:.3f}")
    for r in records:
        if not r.ok:
            lines.append(f"excluded {r.case_id}: {r.status}")
    paths["summary.txt"].write_text("\n".join(lines) + "\n")
    return paths
