"""Command-line front end.

Subcommands:
    fit-zones   zone-wise error statistics from a forecast archive
    solve       SOPF on one forecast (dispatch, references, chance audit)
    calibrate   per-zone droop scale factors from sampled forecasts
    benchmark   full case benchmark and report files
    validate    network checks plus a Monte-Carlo audit of one SOPF solution

Every subcommand accepts ``--config``, ``--out``, ``--seed`` and ``--jobs``;
flags override the config file.  ``SOPFDROOP_OUT`` overrides the output
directory of the file (but not ``--out``).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path


from . import droop, grid, harness, pce, sopf, wind
from .config import RunConfig, dump_config, load_config
from .errors import SopfDroopError

log = logging.getLogger("sopfdroop")


def _model(cfg: RunConfig):
    if cfg.network == "builtin":
        return grid.builtin_testcase()
    return grid.load_network(cfg.network)


def _stats(cfg: RunConfig):
    return wind.read_zone_stats(cfg.zone_stats) if cfg.zone_stats else dict(wind.DEFAULT_ZONE_STATS)


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    (p / "run.cfg").write_text(dump_config(cfg))
    return p


def _options(cfg: RunConfig) -> harness.BenchmarkOptions:
    return harness.BenchmarkOptions(degree=cfg.degree, epsilon=cfg.epsilon, margin_rule=cfg.margin_rule,
                                    k_base=cfg.k_base, jobs=cfg.jobs)


def _solve(cfg: RunConfig, model):
    n = len(model.wind_farms)
    fc = cfg.forecast if len(cfg.forecast) > 1 else cfg.forecast * n
    if len(fc) != n:
        raise SopfDroopError(f"forecast has {len(fc)} values but the network has {n} wind farms")
    stats = _stats(cfg)
    specs = [wind.beta_spec(p, stats[wind.classify_zone(p, cfg.zones)]) for p in fc]
    basis = pce.build_basis(specs, cfg.degree)
    return sopf.solve_sopf(sopf.SopfProblem(model, basis, cfg.epsilon, cfg.margin_rule))


# ---------------------------------------------------------------------------

def cmd_fit_zones(cfg: RunConfig, archive: str, p_max: float) -> int:
    pairs = wind.read_archive(archive)
    stats = wind.fit_zone_stats(pairs, p_max, cfg.zones)
    path = _out(cfg) / "zone_stats.csv"
    wind.write_zone_stats(stats, path, cfg.zones)
    for z in wind.ZONES:
        s = stats[z]
        print(f"{z.value:4s} mu={s.mu:+.4f} sigma={s.sigma:.4f} n={s.n_samples}")
    print(f"wrote {path}")
    return 0


def cmd_solve(cfg: RunConfig) -> int:
    model = _model(cfg)
    sol = _solve(cfg, model)
    out = _out(cfg)
    sopf.export_csv(sol, out / "sopf.csv")
    pce.export_csv(sol.states, out / "pce_coefficients.csv")
    print(f"status {sol.status}  expected cost {sol.objective:.4f}  KKT {sol.kkt_residual:.2e}")
    for cid, (p, v) in sol.references.items():
        print(f"{cid}: P_ref={p * model.base_power:.2f} MW  V_ref={v:.5f} p.u.")
    for conv in model.droop_converters():
        ext = droop.extract_ktilde(sol, conv.id)
        print(f"{conv.id}: k_tilde={ext.k_tilde:.4f}")
    print(f"wrote {out / 'sopf.csv'}")
    return 0 if sol.optimal else 3


def cmd_calibrate(cfg: RunConfig) -> int:
    model = _model(cfg)
    stats = _stats(cfg)
    cases = harness.generate_cases(cfg.n_per_zone, stats, cfg.seed, n_farms=len(model.wind_farms),
                                   cfg=cfg.zones)
    stages = harness.forecast_all(model, cases, stats, _options(cfg))
    for fs in stages:
        if fs.status != "ok":
            log.warning("case %s excluded: %s", fs.stub.case_id, fs.status)
    cal = harness.calibration_from_stages(stages, cfg.k_base)
    path = _out(cfg) / "calibration.csv"
    droop.save_calibration(cal, path)
    for z in wind.ZONES:
        c = cal[z]
        print(f"{z.value:4s} alpha={c.alpha:.6f} median_k_tilde={c.median_ktilde:.4f} n={c.n_cases}")
    print(f"wrote {path}")
    return 0


def cmd_benchmark(cfg: RunConfig) -> int:
    model = _model(cfg)
    stats = _stats(cfg)
    cases = harness.generate_cases(cfg.n_per_zone, stats, cfg.seed, n_farms=len(model.wind_farms),
                                   cfg=cfg.zones)
    cal = droop.load_calibration(cfg.calibration) if cfg.calibration else None
    table, records = harness.run_benchmark(model, cases, stats, _options(cfg), calibration=cal)
    paths = harness.emit_report(table, records, _out(cfg))
    print(paths["summary.txt"].read_text(), end="")
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    model = _model(cfg) if cfg.network == "builtin" else grid.load_network(cfg.network, check=False)
    problems = grid.validate(model)
    for v in problems:
        print(f"violation {v.code}: {v.element} {v.message}")
    if problems:
        return 2
    print("network: ok")
    sol = _solve(cfg, model)
    audit = sopf.mc_audit(sol, cfg.mc_samples, cfg.seed)
    path = _out(cfg) / "validate.csv"
    worst = 0.0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "pce_mean", "pce_std", "mc_mean", "mc_std", "violation_rate"])
        for name in audit.violation_rate:
            m, s = pce.moments(sol.states, name)
            w.writerow([name, repr(m), repr(s), repr(audit.mean[name]), repr(audit.std[name]),
                        repr(audit.violation_rate[name])])
            if name.startswith("vdc:"):
                worst = max(worst, audit.violation_rate[name])
    print(f"SOPF {sol.status}; MC audit {audit.n_samples} samples, {audit.n_failed} failed; "
          f"worst DC-voltage violation rate {worst:.4f} (epsilon {cfg.epsilon})")
    print(f"wrote {path}")
    return 0 if worst <= cfg.epsilon and sol.optimal else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="case-level worker processes (benchmark)")
    common.add_argument("--network", help="network JSON file or 'builtin'")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--degree", type=int)
    common.add_argument("--margin-rule", dest="margin_rule")
    common.add_argument("--k-base", dest="k_base", type=float)
    common.add_argument("--n-per-zone", dest="n_per_zone", type=int)
    common.add_argument("--mc-samples", dest="mc_samples", type=int)
    common.add_argument("--tau1", type=float)
    common.add_argument("--tau2", type=float)
    common.add_argument("--zone-stats", dest="zone_stats")
    common.add_argument("--calibration")
    common.add_argument("--forecast", help="normalised forecast per farm, e.g. '0.5,0.4'")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="sopfdroop",
                                 description="Chance-constrained PCE optimal power flow and adaptive HVDC droop benchmark.")
    sub = ap.add_subparsers(dest="command", required=True)
    fz = sub.add_parser("fit-zones", parents=[common], help="fit zone statistics from an archive")
    fz.add_argument("archive", help="CSV with timestamp,forecast_mw,realized_mw")
    fz.add_argument("--p-max", dest="p_max", type=float, required=True, help="farm rating in MW")
    for name, text in (("solve", "SOPF on one forecast"), ("calibrate", "per-zone droop calibration"),
                       ("benchmark", "strategy benchmark"), ("validate", "network check and MC audit")):
        sub.add_parser(name, parents=[common], help=text)
    return ap


_CONFIG_KEYS = ("out", "seed", "jobs", "network", "epsilon", "degree", "margin_rule", "k_base",
                "n_per_zone", "mc_samples", "tau1", "tau2", "zone_stats", "calibration", "forecast")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {k: getattr(args, k) for k in _CONFIG_KEYS})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if args.command == "fit-zones":
                return cmd_fit_zones(cfg, args.archive, args.p_max)
            return {"solve": cmd_solve, "calibrate": cmd_calibrate, "benchmark": cmd_benchmark,
                    "validate": cmd_validate}[args.command](cfg)
    except (SopfDroopError, OSError, ValueError) as exc:
        print(f"sopfdroop {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
