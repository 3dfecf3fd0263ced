import dataclasses
import json

import pytest
from hypothesis import given, strategies as st

from sopfdroop import grid
from sopfdroop.errors import NetworkParseError, NetworkValidationError
from sopfdroop.grid import ConverterMode


def fixture_dict():
    return grid.to_dict(grid.builtin_testcase())


def test_builtin_counts(model):
    assert len(model.converters) == 4
    assert len(model.wind_farms) == 2
    assert len(model.ac_buses) == 18


def test_builtin_wind_rating(model):
    for w in model.wind_farms:
        assert model.to_mw(w.p_max) == pytest.approx(1970.7, rel=1e-12)


def test_only_vsc4_droops(model):
    assert [c.id for c in model.droop_converters()] == ["VSC4"]
    assert model.converter("VSC1").mode is ConverterMode.DC_SLACK
    assert {model.converter(c).mode for c in ("VSC2", "VSC3")} == {ConverterMode.AC_VF}


def test_builtin_dc_band(model):
    for c in model.converters:
        assert (c.v_min, c.v_max) == (0.9, 1.1)


def test_builtin_validates(model):
    assert grid.validate(model) == []


def test_full_wind_drop_within_limit(model):
    # the fixture resistances are chosen so that full export sags the DC grid by at most 0.05 p.u.
    from sopfdroop import powerflow
    full = [w.p_max for w in model.wind_farms]
    sol = powerflow.solve_powerflow(model, full, raise_on_fail=True)
    v = sol.state.dc_voltages
    assert v.max() - v.min() <= 0.05


def test_two_dc_slacks(model):
    bad = model.replace_converter("VSC4", mode=ConverterMode.DC_SLACK, droop=None)
    codes = [v.code for v in grid.validate(bad)]
    assert codes == ["multiple-dc-slack"]


def test_negative_resistance(model):
    br = model.dc_branches[0]
    bad = dataclasses.replace(model, dc_branches=(dataclasses.replace(br, r=-0.01),) + model.dc_branches[1:])
    v = grid.validate(bad)
    assert [x.code for x in v] == ["nonpositive-impedance"]
    assert v[0].element == br.id


def test_dangling_branch_names_branch(tmp_path):
    d = fixture_dict()
    d["ac_branches"][3]["to"] = "nowhere"
    p = tmp_path / "net.json"
    p.write_text(json.dumps(d))
    with pytest.raises(NetworkValidationError) as exc:
        grid.load_network(p)
    assert d["ac_branches"][3]["id"] in str(exc.value)
    assert any(v.code == "dangling-reference" for v in exc.value.violations)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("")
    with pytest.raises(NetworkParseError):
        grid.load_network(p)


def test_missing_keys():
    with pytest.raises(NetworkParseError, match="converters"):
        grid.from_dict({"base_mva": 100, "ac_buses": [], "dc_buses": [], "ac_branches": [],
                        "dc_branches": [], "generators": [], "wind_farms": []})


def _same(a, b):
    if dataclasses.is_dataclass(a):
        return type(a) is type(b) and all(_same(getattr(a, f.name), getattr(b, f.name))
                                          for f in dataclasses.fields(a))
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, float):
        return a == pytest.approx(b, rel=1e-12, abs=1e-15)
    return a == b


def test_round_trip(tmp_path, model):
    # ohm <-> per-unit conversions may move the last bit, hence the 1e-12 comparison
    p = tmp_path / "net.json"
    grid.save_network(model, p)
    again = grid.load_network(p)
    assert _same(again, model)


def test_lossless_copy(model):
    m = model.lossless()
    assert all(c.loss_a == c.loss_b == c.loss_c == 0 for c in m.converters)
    assert model.converters[0].loss_a > 0


@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_per_unit_round_trip(mw):
    m = grid.builtin_testcase()
    assert m.to_mw(m.to_pu(mw)) == pytest.approx(mw, rel=1e-12, abs=1e-12)
