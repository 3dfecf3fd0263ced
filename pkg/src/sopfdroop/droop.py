"""Adaptive droop gains from first-order PCE coefficients and zone calibration."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import PreconditionError, ZoneError
from .grid import ConverterMode
from .wind import ZONES, Zone


@dataclass(frozen=True)
class DroopExtraction:
    converter: str
    p_hat: np.ndarray        # first-order power coefficients, one per germ
    v_hat: np.ndarray        # first-order DC-voltage coefficients
    weights: np.ndarray
    k_tilde: float
    alpha_z: float = float("nan")
    k_opt: float = float("nan")


def ktilde_from_coefficients(p_hat, v_hat) -> tuple[float, np.ndarray]:
    """Closed-form aggregated gain sum|p| / sum|v| and the voltage weights."""
    p = np.abs(np.asarray(p_hat, float))
    v = np.abs(np.asarray(v_hat, float))
    if p.shape != v.shape or p.ndim != 1 or p.size == 0:
        raise PreconditionError("p_hat and v_hat must be equal-length non-empty vectors")
    den = v.sum()
    if not den > 0:
        raise PreconditionError("all first-order voltage coefficients are zero; droop gain undefined")
    return float(p.sum() / den), v / den


def ktilde_weighted(p_hat, v_hat) -> float:
    """Voltage-weighted mean of the per-source ratios |p_i / v_i|.

    Sources with ``v_i = 0`` carry zero weight and are skipped.
    """
    p = np.abs(np.asarray(p_hat, float))
    v = np.abs(np.asarray(v_hat, float))
    den = v.sum()
    if not den > 0:
        raise PreconditionError("all first-order voltage coefficients are zero; droop gain undefined")
    nz = v > 0
    return float(np.sum((v[nz] / den) * (p[nz] / v[nz])))


def first_order(sol, variable: str) -> np.ndarray:
    """First-order coefficients of ``variable``, ordered by germ."""
    basis = sol.states.basis if hasattr(sol, "states") else sol.basis
    states = sol.states if hasattr(sol, "states") else sol
    if basis.degree < 1:
        raise PreconditionError("droop extraction needs a basis of degree >= 1")
    c = states.coeffs(variable)
    return np.array([c[basis.first_order_index(i)] for i in range(basis.n_dims)])


def extract_ktilde(sol, converter: str) -> DroopExtraction:
    """Aggregated gain of a droop-eligible converter from an SOPF solution."""
    model = sol.states.system.model if hasattr(sol, "states") else sol.system.model
    conv = model.converter(converter)
    if conv.mode is not ConverterMode.VOLTAGE_DROOP:
        raise PreconditionError(f"converter {converter} is not a droop station ({conv.mode.value})")
    p_hat = first_order(sol, f"pconv:{conv.id}")
    v_hat = first_order(sol, f"vdc:{conv.dc_bus}")
    k, w = ktilde_from_coefficients(p_hat, v_hat)
    return DroopExtraction(conv.id, p_hat, v_hat, w, k)


def lower_median(values: Sequence[float]) -> float:
    """Median without interpolation: the lower middle element for even counts."""
    v = np.sort(np.asarray(values, float))
    if v.size == 0:
        raise PreconditionError("median of an empty set")
    return float(v[(v.size - 1) // 2])


@dataclass(frozen=True)
class ZoneCalibration:
    zone: Zone
    alpha: float
    n_cases: int
    median_ktilde: float


def calibrate_alpha(k_tildes: Mapping[Zone, Sequence[float]], k_base: float = 20.0) -> dict[Zone, ZoneCalibration]:
    """Per-zone scale so that the lower-median calibrated gain equals ``k_base``."""
    if not k_base > 0:
        raise PreconditionError("k_base must be positive")
    out = {}
    for zone in ZONES:
        vals = np.asarray(k_tildes.get(zone, ()), float)
        if vals.size == 0:
            raise ZoneError(f"no calibration cases in zone {zone.value}", zone=zone)
        if np.any(~(vals > 0)):
            raise PreconditionError(f"zone {zone.value}: calibration gains must be positive")
        med = lower_median(vals)
        out[zone] = ZoneCalibration(zone, k_base / med, int(vals.size), med)
    return out


def k_opt(k_tilde: float, alpha_z: float) -> float:
    if k_tilde < 0 or alpha_z < 0:
        raise PreconditionError("k_tilde and alpha_z must be non-negative")
    return float(alpha_z * k_tilde)


CALIBRATION_HEADER = ["zone", "alpha_z", "n_cases", "median_k_tilde"]


def save_calibration(cal: Mapping[Zone, ZoneCalibration], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CALIBRATION_HEADER)
        for zone in ZONES:
            c = cal[zone]
            w.writerow([zone.value, repr(c.alpha), c.n_cases, repr(c.median_ktilde)])


def load_calibration(path) -> dict[Zone, ZoneCalibration]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"calibration table not found: {p}")
    out = {}
    with p.open(newline="") as fh:
        for r in csv.DictReader(fh):
            z = Zone(r["zone"])
            out[z] = ZoneCalibration(z, float(r["alpha_z"]), int(r["n_cases"]), float(r["median_k_tilde"]))
    missing = [z.value for z in ZONES if z not in out]
    if missing:
        raise ZoneError(f"calibration table lacks zones {missing}", zone=missing[0])
    return out
