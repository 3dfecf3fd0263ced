import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sopfdroop import grid, powerflow
from sopfdroop.errors import DimensionError, PreconditionError
from sopfdroop.grid import ConverterMode
from sopfdroop.powerflow import Dispatch, PowerFlowSystem, solve_powerflow

from conftest import half_wind
from oracles import polar_powerflow


def unloaded(model):
    """Lossless copy with no load, no wind and zero set-points."""
    import dataclasses
    m = model.lossless()
    buses = tuple(dataclasses.replace(b, pd=0.0, qd=0.0) for b in m.ac_buses)
    gens = tuple(dataclasses.replace(g, p_set=0.0, v_set=1.0) for g in m.generators)
    convs = tuple(dataclasses.replace(c, p_set=0.0, q_set=0.0, v_set=1.0,
                                      droop=None if c.droop is None else
                                      dataclasses.replace(c.droop, p_ref=0.0, v_ref=1.0))
                  for c in m.converters)
    return dataclasses.replace(m, ac_buses=buses, generators=gens, converters=convs)


def test_flat_start_identity(model):
    m = unloaded(model)
    sys_ = PowerFlowSystem(m)
    u = sys_.controls()
    x = sys_.flat_start(u)
    # line charging draws reactive power even at flat voltages; zero the shunts too
    import dataclasses
    m2 = dataclasses.replace(m, ac_branches=tuple(dataclasses.replace(b, b=0.0) for b in m.ac_branches))
    s2 = PowerFlowSystem(m2)
    r = s2.residual(s2.flat_start(u), np.zeros(2), u)
    assert np.max(np.abs(r)) < 1e-14
    assert x.shape == (sys_.n,)


def test_unloaded_solution_is_flat(model):
    import dataclasses
    m = unloaded(model)
    m = dataclasses.replace(m, ac_branches=tuple(dataclasses.replace(b, b=0.0) for b in m.ac_branches))
    sol = solve_powerflow(m, np.zeros(2), raise_on_fail=True)
    assert np.allclose(sol.state.ac_voltages, 1.0, atol=1e-10)
    assert np.allclose(sol.state.dc_voltages, 1.0, atol=1e-10)
    assert np.allclose(sol.state.conv_currents, 0.0, atol=1e-10)


def test_converged_residual(model):
    sol = solve_powerflow(model, half_wind(model))
    assert sol.converged
    assert sol.residual_norm <= 1e-8
    s = sol.state
    r = s.system.residual(s.x, sol.wind, s.ctrl)
    assert np.max(np.abs(r)) <= 1e-8


def test_droop_zero_gain_is_constant_power(model):
    disp = Dispatch(conv_k={"VSC4": 0.0}, conv_p={"VSC4": -1.2})
    sol = solve_powerflow(model, half_wind(model), disp, raise_on_fail=True)
    assert sol.state.conv_p("VSC4") == pytest.approx(-1.2, abs=1e-9)


def test_droop_consistency(model):
    sol = solve_powerflow(model, half_wind(model), raise_on_fail=True)
    c = model.converter("VSC4").droop
    p, v = sol.state.conv_p("VSC4"), sol.state.conv_vdc("VSC4")
    assert abs(p + c.k * (v - c.v_ref) - c.p_ref) < 1e-8


def test_wind_above_rating(model):
    with pytest.raises(PreconditionError):
        solve_powerflow(model, [3.0, 0.5])


def test_wind_wrong_length(model):
    with pytest.raises((DimensionError, PreconditionError)):
        solve_powerflow(model, [0.5])


def test_state_dimension(model):
    sys_ = PowerFlowSystem(model)
    with pytest.raises(DimensionError):
        sys_.residual(np.ones(sys_.n + 1), np.zeros(2), sys_.controls())


def _compare_polar(model, wind):
    ours = solve_powerflow(model, wind, raise_on_fail=True).state
    ref = polar_powerflow(model, wind)
    assert ref["success"] and ref["residual"] < 1e-10
    assert np.max(np.abs(ours.ac_voltages - ref["v"])) < 1e-6
    assert np.max(np.abs(ours.dc_voltages - ref["vdc"])) < 1e-6
    for cid, p in ref["pconv"].items():
        assert ours.conv_p(cid) == pytest.approx(p, abs=1e-6)


def test_polar_oracle_half_wind(model):
    _compare_polar(model, half_wind(model))


def test_polar_oracle_random_injections(model):
    rng = np.random.default_rng(11)
    pmax = np.array([w.p_max for w in model.wind_farms])
    for _ in range(20):
        _compare_polar(model, rng.uniform(0.0, 1.0, 2) * pmax)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_energy_conservation(a, b):
    m = grid.builtin_testcase()
    pmax = np.array([w.p_max for w in m.wind_farms])
    sol = solve_powerflow(m, np.array([a, b]) * pmax)
    assert sol.converged
    s = sol.state
    bal = s.system.balance(s.x, sol.wind, s.ctrl)
    assert abs(bal["mismatch"]) <= 1e-6


def test_mode_override_unknown_converter(model):
    with pytest.raises(KeyError):
        PowerFlowSystem(model, {"VSC9": ConverterMode.CONST_PQ})


def test_batch_matches_single(model):
    sys_ = PowerFlowSystem(model)
    u = sys_.controls()
    pmax = sys_.wind_pmax
    W = np.array([[0.2, 0.3], [0.8, 0.6], [0.5, 0.5]]) * pmax
    x0 = solve_powerflow(model, half_wind(model)).state.x
    X, ok = powerflow.solve_batch(sys_, W, u, x0)
    assert ok.all()
    for w, x in zip(W, X):
        ref = solve_powerflow(model, w, system=sys_).state.x
        assert np.max(np.abs(x - ref)) < 1e-7


def test_dump_csv(tmp_path, model):
    sol = solve_powerflow(model, half_wind(model))
    p = tmp_path / "pf.csv"
    powerflow.dump_solution_csv(sol, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "element,id,v_re,v_im,v_dc,p,q"
    assert len(lines) == 1 + 18 + 4 + len(model.generators) + 4
