"""Zone-wise Beta model of normalised wind forecast errors."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .errors import MomentError, PreconditionError, ZoneError

log = logging.getLogger(__name__)

MU_EFF_CLAMP = (0.005, 0.995)


class Zone(str, Enum):
    LOW = "Low"
    MID = "Mid"
    HIGH = "High"


ZONES = (Zone.LOW, Zone.MID, Zone.HIGH)


@dataclass(frozen=True)
class ZoneConfig:
    tau1: float = 0.3
    tau2: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.tau1 < self.tau2 < 1.0:
            raise PreconditionError(f"zone thresholds must satisfy 0 < tau1 < tau2 < 1, "
                                    f"got ({self.tau1}, {self.tau2})")

    def bounds(self, zone: Zone) -> tuple[float, float]:
        return {Zone.LOW: (0.0, self.tau1), Zone.MID: (self.tau1, self.tau2),
                Zone.HIGH: (self.tau2, 1.0)}[Zone(zone)]


@dataclass(frozen=True)
class ZoneStats:
    zone: Zone
    mu: float
    sigma: float
    n_samples: int
    degenerate: bool = False


@dataclass(frozen=True)
class BetaSpec:
    alpha: float
    beta: float
    mu_eff: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise MomentError(f"Beta shapes must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


# Zone-wise statistics of the normalised error (realisation - forecast)/p_max.
DEFAULT_ZONE_STATS = {
    Zone.LOW: ZoneStats(Zone.LOW, 0.011, 0.035, 0),
    Zone.MID: ZoneStats(Zone.MID, 0.031, 0.081, 0),
    Zone.HIGH: ZoneStats(Zone.HIGH, 0.013, 0.100, 0),
}


def classify_zone(p_tilde: float, cfg: ZoneConfig = ZoneConfig()) -> Zone:
    if not 0.0 <= p_tilde <= 1.0:
        raise PreconditionError(f"normalised forecast {p_tilde} outside [0, 1]")
    if p_tilde < cfg.tau1:
        return Zone.LOW
    if p_tilde < cfg.tau2:
        return Zone.MID
    return Zone.HIGH


def fit_zone_stats(pairs: Iterable[Sequence[float]], p_max: float,
                   cfg: ZoneConfig = ZoneConfig()) -> dict[Zone, ZoneStats]:
    """Per-zone sample mean and standard deviation of normalised errors.

    ``pairs`` holds (forecast MW, realisation MW).  Forecasts above ``p_max``
    are clipped into the High zone.  A zone with zero spread is returned with
    ``degenerate=True``.
    """
    if not p_max > 0:
        raise PreconditionError("p_max must be positive")
    arr = np.asarray(list(pairs), float).reshape(-1, 2)
    p_tilde = np.clip(arr[:, 0] / p_max, 0.0, 1.0)
    err = (arr[:, 1] - arr[:, 0]) / p_max
    zone_of = np.where(p_tilde < cfg.tau1, 0, np.where(p_tilde < cfg.tau2, 1, 2))
    out = {}
    for zi, zone in enumerate(ZONES):
        e = err[zone_of == zi]
        if e.size < 2:
            raise ZoneError(f"zone {zone.value} has {e.size} forecast-realisation pairs (need >= 2)",
                            zone=zone)
        mu = float(np.mean(e))
        sd = float(np.std(e, ddof=1))
        degenerate = not sd > 1e-12 * max(1.0, abs(mu))
        if degenerate:
            log.warning("zone %s has zero error variance; sampler is degenerate", zone.value)
            sd = 0.0
        out[zone] = ZoneStats(zone, mu, sd, int(e.size), degenerate)
    return out


def beta_spec(p_tilde: float, stats: ZoneStats, *, clamp=MU_EFF_CLAMP) -> BetaSpec:
    """Moment-matched Beta law of the normalised wind output.

    The forecast is shifted by the zone bias, clamped into ``clamp`` and the
    shapes follow from matching mean ``mu_eff`` and variance ``sigma**2``.
    """
    if stats.degenerate or not stats.sigma > 0:
        raise MomentError(f"zone {Zone(stats.zone).value} is degenerate (sigma = 0): point mass, no Beta law")
    mu_eff = p_tilde + stats.mu
    if not 0.0 < mu_eff < 1.0:
        raise MomentError(f"effective mean {mu_eff:.6g} outside (0, 1)")
    if clamp is not None:
        lo, hi = clamp
        if not lo <= mu_eff <= hi:
            log.info("clamping effective mean %.6g into [%g, %g]", mu_eff, lo, hi)
            mu_eff = min(max(mu_eff, lo), hi)
    var = stats.sigma ** 2
    K = mu_eff * (1.0 - mu_eff) / var - 1.0
    if not K > 0:
        raise MomentError(f"infeasible moments: mean {mu_eff:.6g}, variance {var:.6g} (K = {K:.6g} <= 0)")
    return BetaSpec(alpha=mu_eff * K, beta=(1.0 - mu_eff) * K, mu_eff=mu_eff)


def sample(spec: BetaSpec, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. Beta draws by inverse CDF; ``seed`` may be an int or a SeedSequence."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    u = np.random.default_rng(seed).random(n)
    return special.betaincinv(spec.alpha, spec.beta, u)


def feasible_forecast_range(stats: ZoneStats, cfg: ZoneConfig = ZoneConfig(),
                            min_shape: float = 1.0, grid: int = 4001) -> tuple[float, float]:
    """Sub-interval of the zone whose Beta law has both shapes >= ``min_shape``.

    Forecasts near 0 or 1 with a large zone variance either admit no Beta
    law at all or an unbounded density; case generation avoids them.
    """
    lo, hi = cfg.bounds(stats.zone)
    hi_open = hi if stats.zone is Zone.HIGH else hi - 1e-9
    p = np.linspace(lo, hi_open, grid)
    ok = np.zeros(p.size, bool)
    for i, pt in enumerate(p):
        try:
            s = beta_spec(float(pt), stats, clamp=None)
        except MomentError:
            continue
        ok[i] = s.alpha >= min_shape and s.beta >= min_shape
    if not ok.any():
        raise ZoneError(f"zone {Zone(stats.zone).value}: no forecast admits a Beta law", zone=stats.zone)
    idx = np.flatnonzero(ok)
    return float(p[idx[0]]), float(p[idx[-1]])


# ------------------------------------------------------------------ archives

ARCHIVE_HEADER = ["timestamp", "forecast_mw", "realized_mw"]


def read_archive(path) -> list[tuple[float, float]]:
    """Read ``timestamp,forecast_mw,realized_mw`` rows."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"archive not found: {p}")
    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(ARCHIVE_HEADER[1:]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{p}: missing columns {sorted(missing)}")
        return [(float(r["forecast_mw"]), float(r["realized_mw"])) for r in reader]


def write_archive(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ARCHIVE_HEADER)
        for i, (fc, real) in enumerate(rows):
            w.writerow([i, repr(float(fc)), repr(float(real))])


def synthetic_archive(p_max: float, n_per_zone: int, seed: int,
                      stats: dict[Zone, ZoneStats] = DEFAULT_ZONE_STATS,
                      cfg: ZoneConfig = ZoneConfig()) -> list[tuple[float, float]]:
    """Forecast/realisation pairs whose errors follow the given zone statistics.

    Forecasts are uniform on the feasible part of each zone; realisations are
    drawn from the moment-matched Beta law, so errors have mean ``mu_z`` and
    standard deviation ``sigma_z`` exactly in distribution.
    """
    ss = np.random.SeedSequence(seed)
    rows = []
    for zone, child in zip(ZONES, ss.spawn(len(ZONES))):
        rng = np.random.default_rng(child)
        lo, hi = feasible_forecast_range(stats[zone], cfg)
        pt = rng.uniform(lo, hi, n_per_zone)
        u = rng.random(n_per_zone)
        for p, q in zip(pt, u):
            s = beta_spec(float(p), stats[zone], clamp=None)
            real = special.betaincinv(s.alpha, s.beta, q)
            rows.append((p * p_max, real * p_max))
    return rows


def write_zone_stats(stats: dict[Zone, ZoneStats], path, cfg: ZoneConfig = ZoneConfig()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zone", "range_lo", "range_hi", "mu_z", "sigma_z", "n_samples", "degenerate"])
        for z in ZONES:
            s = stats[z]
            lo, hi = cfg.bounds(z)
            w.writerow([z.value, lo, hi, repr(s.mu), repr(s.sigma), s.n_samples, int(s.degenerate)])


def read_zone_stats(path) -> dict[Zone, ZoneStats]:
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            z = Zone(r["zone"])
            out[z] = ZoneStats(z, float(r["mu_z"]), float(r["sigma_z"]), int(r["n_samples"]),
                               bool(int(r.get("degenerate", 0) or 0)))
    missing = [z.value for z in ZONES if z not in out]
    if missing:
        raise ZoneError(f"zone statistics file lacks zones {missing}", zone=missing[0])
    return out
