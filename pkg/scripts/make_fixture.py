"""Regenerate ``src/sopfdroop/data/testcase_4t.json``.

Two IEEE 9-bus areas (MATPOWER case9 data, power scaled x10 on a 1000 MVA
base so per-unit impedances are unchanged) joined by a 4-terminal meshed DC
grid.  VSC1 (area A) is the DC slack, VSC4 (area B) the droop station and
VSC2/VSC3 the offshore collectors of the two 1970.7 MW wind farms.

Usage: python scripts/make_fixture.py [output.json]
"""
import json
import sys
from pathlib import Path

BASE_MVA = 1000.0
AC_KV = 345.0
DC_KV = 640.0
SCALE = 10.0

# case9: (from, to, r, x, b, rateA MVA) in p.u. on 100 MVA
CASE9_BRANCHES = [
    (1, 4, 0.0, 0.0576, 0.0, 250), (4, 5, 0.017, 0.092, 0.158, 250),
    (5, 6, 0.039, 0.17, 0.358, 150), (3, 6, 0.0, 0.0586, 0.0, 300),
    (6, 7, 0.0119, 0.1008, 0.209, 150), (7, 8, 0.0085, 0.072, 0.149, 250),
    (8, 2, 0.0, 0.0625, 0.0, 250), (8, 9, 0.032, 0.161, 0.306, 250),
    (9, 4, 0.01, 0.085, 0.176, 250),
]
CASE9_LOADS = {5: (90.0, 30.0), 7: (100.0, 35.0), 9: (125.0, 50.0)}
# bus, Pg, Pmin, Pmax, Qmin, Qmax, Vg, (c2 $/MW^2h, c1 $/MWh, c0 $/h)
CASE9_GENS = [
    (1, 72.3, 10, 250, -300, 300, 1.0, (0.11, 5.0, 150.0)),
    (2, 163.0, 10, 300, -300, 300, 1.0, (0.085, 1.2, 600.0)),
    (3, 85.0, 10, 270, -300, 300, 1.0, (0.1225, 1.0, 335.0)),
]
# quadratic cost multiplier per area: area B is the expensive side
AREA_COST = {"A": 1.0, "B": 4.0}
# generator Pmax multiplier per area (after x10 scaling)
AREA_PMAX = {"A": 1.0, "B": 1.0}
CONV_BUS = {"A": 5, "B": 5}

# DC lines: (from, to, r p.u. on DC_KV/BASE_MVA)
DC_LINES = [
    ("D2", "D1", 0.048), ("D3", "D1", 0.056),
    ("D2", "D4", 0.032), ("D3", "D4", 0.028),
    ("D2", "D3", 0.080),
]
DC_RATING_MW = 3000.0
WIND_PMAX_MW = 1970.7


def build() -> dict:
    zb_ac = AC_KV ** 2 / BASE_MVA
    zb_dc = DC_KV ** 2 / BASE_MVA
    ac_buses, ac_branches, gens = [], [], []
    for area in ("A", "B"):
        for n in range(1, 10):
            kind = "slack" if n == 1 else ("pv" if n in (2, 3) else "pq")
            pd, qd = CASE9_LOADS.get(n, (0.0, 0.0))
            ac_buses.append({"id": f"{area}{n}", "base_kv": AC_KV, "type": kind,
                             "pd_mw": pd * SCALE, "qd_mvar": qd * SCALE})
        for f, t, r, x, b, rate in CASE9_BRANCHES:
            # per-unit on 100 MVA == per-unit on 1000 MVA for the x10 system
            ac_branches.append({"id": f"{area}{f}-{area}{t}", "from": f"{area}{f}", "to": f"{area}{t}",
                                "r_ohm": r * zb_ac, "x_ohm": x * zb_ac, "b_us": b / zb_ac * 1e6,
                                "rating_mva": rate * SCALE})
        for k, (bus, pg, pmin, pmax, qmin, qmax, vg, (c2, c1, c0)) in enumerate(CASE9_GENS, 1):
            gens.append({"id": f"G{area}{k}", "bus": f"{area}{bus}",
                         "p_min_mw": pmin * SCALE, "p_max_mw": pmax * SCALE * AREA_PMAX[area],
                         "q_min_mvar": qmin * SCALE, "q_max_mvar": qmax * SCALE,
                         "p_set_mw": pg * SCALE, "v_set": vg,
                         "cost": {"c2": c2 / SCALE * AREA_COST[area], "c1": c1, "c0": c0 * SCALE}})
    dc_buses = [{"id": f"D{i}", "base_kv": DC_KV} for i in range(1, 5)]
    dc_branches = [{"id": f"{f}-{t}", "from": f, "to": t, "r_ohm": r * zb_dc, "rating_mw": DC_RATING_MW}
                   for f, t, r in DC_LINES]
    loss = {"a": 0.011, "b": 0.003, "c": 0.004}
    converters = [
        {"id": "VSC1", "ac_bus": f"A{CONV_BUS['A']}", "dc_bus": "D1", "mode": "DcSlack",
         "rating_mva": 4000.0, "v_dc_min": 0.9, "v_dc_max": 1.1, "loss": loss,
         "p_set_mw": 0.0, "q_set_mvar": 0.0, "v_set": 1.0},
        {"id": "VSC2", "ac_bus": None, "dc_bus": "D2", "mode": "AcVf",
         "rating_mva": 3000.0, "v_dc_min": 0.9, "v_dc_max": 1.1, "loss": loss,
         "p_set_mw": 0.0, "q_set_mvar": 0.0, "v_set": 1.0},
        {"id": "VSC3", "ac_bus": None, "dc_bus": "D3", "mode": "AcVf",
         "rating_mva": 3000.0, "v_dc_min": 0.9, "v_dc_max": 1.1, "loss": loss,
         "p_set_mw": 0.0, "q_set_mvar": 0.0, "v_set": 1.0},
        {"id": "VSC4", "ac_bus": f"B{CONV_BUS['B']}", "dc_bus": "D4", "mode": "VoltageDroop",
         "rating_mva": 4000.0, "v_dc_min": 0.9, "v_dc_max": 1.1, "loss": loss,
         "p_set_mw": 0.0, "q_set_mvar": 0.0, "v_set": 1.0,
         "droop": {"p_ref_mw": -2000.0, "v_ref": 1.0, "k": 20.0}},
    ]
    wind = [{"id": "W1", "converter": "VSC2", "p_max_mw": WIND_PMAX_MW},
            {"id": "W2", "converter": "VSC3", "p_max_mw": WIND_PMAX_MW}]
    return {"name": "synthetic 4-terminal AC/MTDC test system (2 x IEEE 9-bus x10)",
            "base_mva": BASE_MVA, "ac_buses": ac_buses, "dc_buses": dc_buses,
            "ac_branches": ac_branches, "dc_branches": dc_branches,
            "converters": converters, "generators": gens, "wind_farms": wind}


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "src" / "sopfdroop" / "data" / "testcase_4t.json")
    out.write_text(json.dumps(build(), indent=2) + "\n")
    print(f"wrote {out}")
