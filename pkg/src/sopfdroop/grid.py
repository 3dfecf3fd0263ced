"""Hybrid AC/MTDC network model, validation and JSON file I/O.

Everything inside :class:`NetworkModel` is per-unit on ``base_mva``.  The
network file uses engineering units (MW, MVAr, kV, ohm, microsiemens); the
conversion happens in :func:`from_dict` / :func:`to_dict`.  See
``docs/network-schema.md`` for the file layout.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NetworkParseError, NetworkValidationError

DEFAULT_LOSS = (0.011, 0.003, 0.004)

BUILTIN_FILE = "testcase_4t.json"


class ConverterMode(str, Enum):
    DC_SLACK = "DcSlack"
    CONST_PQ = "ConstPQ"
    AC_VF = "AcVf"
    VOLTAGE_DROOP = "VoltageDroop"


class BusKind(str, Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class AcBus:
    id: str
    base_kv: float
    kind: BusKind = BusKind.PQ
    pd: float = 0.0
    qd: float = 0.0


@dataclass(frozen=True)
class DcBus:
    id: str
    base_kv: float


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    rating: float = 1.0


@dataclass(frozen=True)
class DcBranch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    rating: float = 1.0


@dataclass(frozen=True)
class DroopSetting:
    p_ref: float
    v_ref: float
    k: float


@dataclass(frozen=True)
class Converter:
    """Voltage source converter.

    ``p_set``/``q_set`` are AC-side powers drawn from the AC bus into the
    converter (rectifier positive).  ``v_set`` is the DC voltage set-point for
    DC-slack stations and the offshore AC voltage magnitude for AcVf
    collectors, which have no AC bus in the onshore grids.
    """

    id: str
    ac_bus: Optional[str]
    dc_bus: str
    mode: ConverterMode
    p_rating: float
    v_min: float = 0.9
    v_max: float = 1.1
    loss_a: float = DEFAULT_LOSS[0]
    loss_b: float = DEFAULT_LOSS[1]
    loss_c: float = DEFAULT_LOSS[2]
    p_set: float = 0.0
    q_set: float = 0.0
    v_set: float = 1.0
    droop: Optional[DroopSetting] = None


@dataclass(frozen=True)
class Generator:
    """Dispatchable unit; cost is ``c2*P**2 + c1*P + c0`` with P in p.u."""

    id: str
    bus: str
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    p_set: float = 0.0
    v_set: float = 1.0
    cost: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class WindFarm:
    id: str
    converter: str
    p_max: float


@dataclass(frozen=True)
class NetworkModel:
    base_power: float
    ac_buses: tuple[AcBus, ...] = ()
    dc_buses: tuple[DcBus, ...] = ()
    ac_branches: tuple[Branch, ...] = ()
    dc_branches: tuple[DcBranch, ...] = ()
    converters: tuple[Converter, ...] = ()
    generators: tuple[Generator, ...] = ()
    wind_farms: tuple[WindFarm, ...] = ()
    name: str = ""

    @cached_property
    def ac_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.ac_buses)}

    @cached_property
    def dc_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.dc_buses)}

    def converter(self, conv_id: str) -> Converter:
        for c in self.converters:
            if c.id == conv_id:
                return c
        raise KeyError(conv_id)

    def generator(self, gen_id: str) -> Generator:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise KeyError(gen_id)

    def droop_converters(self) -> list[Converter]:
        return [c for c in self.converters if c.mode is ConverterMode.VOLTAGE_DROOP]

    def replace_converter(self, conv_id: str, **changes) -> "NetworkModel":
        convs = tuple(dataclasses.replace(c, **changes) if c.id == conv_id else c
                      for c in self.converters)
        return dataclasses.replace(self, converters=convs)

    def replace_generator(self, gen_id: str, **changes) -> "NetworkModel":
        gens = tuple(dataclasses.replace(g, **changes) if g.id == gen_id else g
                     for g in self.generators)
        return dataclasses.replace(self, generators=gens)

    def lossless(self) -> "NetworkModel":
        """Copy with every converter loss coefficient zeroed."""
        convs = tuple(dataclasses.replace(c, loss_a=0.0, loss_b=0.0, loss_c=0.0)
                      for c in self.converters)
        return dataclasses.replace(self, converters=convs)

    def to_mw(self, p_pu):
        return np.asarray(p_pu) * self.base_power if np.ndim(p_pu) else float(p_pu) * self.base_power

    def to_pu(self, p_mw):
        return np.asarray(p_mw) / self.base_power if np.ndim(p_mw) else float(p_mw) / self.base_power


@dataclass(frozen=True)
class Violation:
    code: str
    element: str
    message: str = field(default="", compare=False)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def validate(model: NetworkModel) -> list[Violation]:
    """Return every invariant violation of ``model`` (empty when valid)."""
    out: list[Violation] = []
    add = lambda code, el, msg="": out.append(Violation(code, el, msg))  # noqa: E731

    if not model.base_power > 0:
        add("nonpositive-base", "base_mva", f"base power {model.base_power}")

    for kind, items in (("ac-bus", model.ac_buses), ("dc-bus", model.dc_buses),
                        ("ac-branch", model.ac_branches), ("dc-branch", model.dc_branches),
                        ("converter", model.converters), ("generator", model.generators),
                        ("wind-farm", model.wind_farms)):
        seen = set()
        for it in items:
            if it.id in seen:
                add("duplicate-id", it.id, f"duplicate {kind} id")
            seen.add(it.id)

    ac = set(model.ac_index)
    dc = set(model.dc_index)

    for br in model.ac_branches:
        for end in (br.from_bus, br.to_bus):
            if end not in ac:
                add("dangling-reference", br.id, f"AC branch endpoint {end!r} is not an AC bus")
        if br.r < 0 or not (br.r > 0 or br.x != 0):
            add("nonpositive-impedance", br.id, f"r={br.r}, x={br.x}")
        if not br.rating > 0:
            add("nonpositive-rating", br.id, f"rating {br.rating}")
    for br in model.dc_branches:
        for end in (br.from_bus, br.to_bus):
            if end not in dc:
                add("dangling-reference", br.id, f"DC branch endpoint {end!r} is not a DC bus")
        if not br.r > 0:
            add("nonpositive-impedance", br.id, f"r={br.r}")
        if not br.rating > 0:
            add("nonpositive-rating", br.id, f"rating {br.rating}")

    for b in list(model.ac_buses) + list(model.dc_buses):
        if not b.base_kv > 0:
            add("nonpositive-base", b.id, f"base kV {b.base_kv}")

    for c in model.converters:
        if c.dc_bus not in dc:
            add("dangling-reference", c.id, f"converter DC bus {c.dc_bus!r} missing")
        if c.mode is ConverterMode.AC_VF:
            if c.ac_bus is not None:
                add("acvf-with-ac-bus", c.id, "AcVf collectors feed an offshore island, not a grid bus")
        elif c.ac_bus not in ac:
            add("dangling-reference", c.id, f"converter AC bus {c.ac_bus!r} missing")
        if not c.p_rating > 0:
            add("nonpositive-rating", c.id, f"rating {c.p_rating}")
        if not c.v_min < c.v_max:
            add("vdc-limits-order", c.id, f"v_min={c.v_min} >= v_max={c.v_max}")
        if c.mode is ConverterMode.VOLTAGE_DROOP:
            if c.droop is None:
                add("droop-setting-mismatch", c.id, "droop mode without droop setting")
            elif c.droop.k < 0:
                add("negative-droop-gain", c.id, f"k={c.droop.k}")
        elif c.droop is not None:
            add("droop-setting-mismatch", c.id, f"droop setting on {c.mode.value} converter")

    n_dc_slack = sum(c.mode is ConverterMode.DC_SLACK for c in model.converters)
    if n_dc_slack > 1:
        add("multiple-dc-slack", "converters", f"{n_dc_slack} DC-slack converters")
    elif n_dc_slack == 0 and model.dc_buses:
        add("no-dc-slack", "converters", "no DC-slack converter")

    for g in model.generators:
        if g.bus not in ac:
            add("dangling-reference", g.id, f"generator bus {g.bus!r} missing")
        if g.p_min > g.p_max or g.q_min > g.q_max:
            add("generator-limits-order", g.id)
    for w in model.wind_farms:
        conv = next((c for c in model.converters if c.id == w.converter), None)
        if conv is None:
            add("dangling-reference", w.id, f"wind farm converter {w.converter!r} missing")
        elif conv.mode is not ConverterMode.AC_VF:
            add("wind-converter-mode", w.id, f"{w.converter} is not an AcVf collector")
        if not w.p_max > 0:
            add("nonpositive-rating", w.id, f"p_max {w.p_max}")

    out.extend(_check_ac_slacks(model))
    return out


def _check_ac_slacks(model: NetworkModel) -> list[Violation]:
    n = len(model.ac_buses)
    if n == 0:
        return []
    idx = model.ac_index
    pairs = [(idx[b.from_bus], idx[b.to_bus]) for b in model.ac_branches
             if b.from_bus in idx and b.to_bus in idx]
    rows = [p[0] for p in pairs]
    cols = [p[1] for p in pairs]
    adj = coo_matrix((np.ones(len(pairs)), (rows, cols)), shape=(n, n))
    n_isl, labels = connected_components(adj, directed=False)
    gen_buses = {g.bus for g in model.generators}
    out = []
    for isl in range(n_isl):
        members = [model.ac_buses[i] for i in np.flatnonzero(labels == isl)]
        slacks = [b for b in members if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            out.append(Violation("ac-slack-count", members[0].id,
                                 f"AC island with {len(slacks)} slack buses"))
        for b in slacks:
            if b.id not in gen_buses:
                out.append(Violation("slack-without-generator", b.id))
    return out


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

_REQUIRED = ("base_mva", "ac_buses", "dc_buses", "ac_branches", "dc_branches",
             "converters", "generators", "wind_farms")


def from_dict(data: dict) -> NetworkModel:
    """Build a per-unit model from the engineering-unit file layout."""
    if not isinstance(data, dict):
        raise NetworkParseError("network document must be a JSON object")
    missing = [k for k in _REQUIRED if k not in data]
    if missing:
        raise NetworkParseError(f"missing top-level keys: {', '.join(missing)}")
    try:
        base = float(data["base_mva"])
        if not base > 0:
            raise NetworkParseError(f"base_mva must be positive, got {base}")
        ac_kv = {b["id"]: float(b["base_kv"]) for b in data["ac_buses"]}
        dc_kv = {b["id"]: float(b["base_kv"]) for b in data["dc_buses"]}

        def zb(kv):
            return kv * kv / base

        ac_buses = tuple(
            AcBus(id=str(b["id"]), base_kv=float(b["base_kv"]), kind=BusKind(b.get("type", "pq")),
                  pd=float(b.get("pd_mw", 0.0)) / base, qd=float(b.get("qd_mvar", 0.0)) / base)
            for b in data["ac_buses"])
        dc_buses = tuple(DcBus(id=str(b["id"]), base_kv=float(b["base_kv"])) for b in data["dc_buses"])

        ac_branches = []
        for br in data["ac_branches"]:
            z = zb(ac_kv.get(br["from"], float("nan")))
            ac_branches.append(Branch(
                id=str(br["id"]), from_bus=str(br["from"]), to_bus=str(br["to"]),
                r=float(br["r_ohm"]) / z, x=float(br["x_ohm"]) / z,
                b=float(br.get("b_us", 0.0)) * 1e-6 * z,
                rating=float(br["rating_mva"]) / base))
        dc_branches = []
        for br in data["dc_branches"]:
            z = zb(dc_kv.get(br["from"], float("nan")))
            dc_branches.append(DcBranch(
                id=str(br["id"]), from_bus=str(br["from"]), to_bus=str(br["to"]),
                r=float(br["r_ohm"]) / z, rating=float(br["rating_mw"]) / base))

        converters = []
        for c in data["converters"]:
            loss = c.get("loss", {})
            droop = c.get("droop")
            converters.append(Converter(
                id=str(c["id"]), ac_bus=c.get("ac_bus"), dc_bus=str(c["dc_bus"]),
                mode=ConverterMode(c["mode"]), p_rating=float(c["rating_mva"]) / base,
                v_min=float(c.get("v_dc_min", 0.9)), v_max=float(c.get("v_dc_max", 1.1)),
                loss_a=float(loss.get("a", DEFAULT_LOSS[0])),
                loss_b=float(loss.get("b", DEFAULT_LOSS[1])),
                loss_c=float(loss.get("c", DEFAULT_LOSS[2])),
                p_set=float(c.get("p_set_mw", 0.0)) / base,
                q_set=float(c.get("q_set_mvar", 0.0)) / base,
                v_set=float(c.get("v_set", 1.0)),
                droop=None if droop is None else DroopSetting(
                    p_ref=float(droop["p_ref_mw"]) / base, v_ref=float(droop["v_ref"]),
                    k=float(droop["k"]))))

        generators = []
        for g in data["generators"]:
            cost = g.get("cost", {})
            # $/MW^2h -> $/pu^2h etc.
            generators.append(Generator(
                id=str(g["id"]), bus=str(g["bus"]),
                p_min=float(g["p_min_mw"]) / base, p_max=float(g["p_max_mw"]) / base,
                q_min=float(g["q_min_mvar"]) / base, q_max=float(g["q_max_mvar"]) / base,
                p_set=float(g.get("p_set_mw", 0.0)) / base, v_set=float(g.get("v_set", 1.0)),
                cost=(float(cost.get("c2", 0.0)) * base * base, float(cost.get("c1", 0.0)) * base,
                      float(cost.get("c0", 0.0)))))
        wind = tuple(WindFarm(id=str(w["id"]), converter=str(w["converter"]),
                              p_max=float(w["p_max_mw"]) / base) for w in data["wind_farms"])
    except NetworkParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkParseError(f"malformed network document: {exc!r}") from exc

    return NetworkModel(base_power=base, ac_buses=ac_buses, dc_buses=dc_buses,
                        ac_branches=tuple(ac_branches), dc_branches=tuple(dc_branches),
                        converters=tuple(converters), generators=tuple(generators),
                        wind_farms=wind, name=str(data.get("name", "")))


def to_dict(model: NetworkModel) -> dict:
    base = model.base_power
    ac_kv = {b.id: b.base_kv for b in model.ac_buses}
    dc_kv = {b.id: b.base_kv for b in model.dc_buses}
    zb = lambda kv: kv * kv / base  # noqa: E731
    out = {
        "name": model.name,
        "base_mva": base,
        "ac_buses": [{"id": b.id, "base_kv": b.base_kv, "type": b.kind.value,
                      "pd_mw": b.pd * base, "qd_mvar": b.qd * base} for b in model.ac_buses],
        "dc_buses": [{"id": b.id, "base_kv": b.base_kv} for b in model.dc_buses],
        "ac_branches": [{"id": br.id, "from": br.from_bus, "to": br.to_bus,
                         "r_ohm": br.r * zb(ac_kv[br.from_bus]), "x_ohm": br.x * zb(ac_kv[br.from_bus]),
                         "b_us": br.b / zb(ac_kv[br.from_bus]) * 1e6, "rating_mva": br.rating * base}
                        for br in model.ac_branches],
        "dc_branches": [{"id": br.id, "from": br.from_bus, "to": br.to_bus,
                         "r_ohm": br.r * zb(dc_kv[br.from_bus]), "rating_mw": br.rating * base}
                        for br in model.dc_branches],
        "converters": [],
        "generators": [],
        "wind_farms": [{"id": w.id, "converter": w.converter, "p_max_mw": w.p_max * base}
                       for w in model.wind_farms],
    }
    for c in model.converters:
        d = {"id": c.id, "ac_bus": c.ac_bus, "dc_bus": c.dc_bus, "mode": c.mode.value,
             "rating_mva": c.p_rating * base, "v_dc_min": c.v_min, "v_dc_max": c.v_max,
             "loss": {"a": c.loss_a, "b": c.loss_b, "c": c.loss_c},
             "p_set_mw": c.p_set * base, "q_set_mvar": c.q_set * base, "v_set": c.v_set}
        if c.droop is not None:
            d["droop"] = {"p_ref_mw": c.droop.p_ref * base, "v_ref": c.droop.v_ref, "k": c.droop.k}
        out["converters"].append(d)
    for g in model.generators:
        c2, c1, c0 = g.cost
        out["generators"].append({
            "id": g.id, "bus": g.bus, "p_min_mw": g.p_min * base, "p_max_mw": g.p_max * base,
            "q_min_mvar": g.q_min * base, "q_max_mvar": g.q_max * base,
            "p_set_mw": g.p_set * base, "v_set": g.v_set,
            "cost": {"c2": c2 / base / base, "c1": c1 / base, "c0": c0}})
    return out


def loads(text: str, *, check: bool = True) -> NetworkModel:
    if not text.strip():
        raise NetworkParseError("empty network document")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"not valid JSON: {exc}") from exc
    model = from_dict(data)
    if check:
        violations = validate(model)
        if violations:
            raise NetworkValidationError(violations)
    return model


def dumps(model: NetworkModel) -> str:
    return json.dumps(to_dict(model), indent=2)


def load_network(path, *, check: bool = True) -> NetworkModel:
    """Read and validate a network file (engineering units -> per-unit)."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise NetworkParseError(f"cannot read network file {p}: {exc}") from exc
    return loads(text, check=check)


def save_network(model: NetworkModel, path) -> None:
    Path(path).write_text(dumps(model))


def builtin_testcase() -> NetworkModel:
    """Synthetic 4-terminal AC/MTDC fixture (two scaled IEEE 9-bus areas)."""
    text = resources.files("sopfdroop").joinpath("data", BUILTIN_FILE).read_text()
    return loads(text)
