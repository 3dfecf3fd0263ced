import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sopfdroop import pce, sopf, wind
from sopfdroop.errors import InfeasibleError, PreconditionError
from sopfdroop.sopf import MarginRule


@pytest.fixture(scope="module")
def mid_sopf(model, mid_basis):
    return sopf.solve_sopf(sopf.SopfProblem(model, mid_basis, 0.05))


def test_chebyshev_margin():
    assert sopf.chance_margin(0.05) == pytest.approx(math.sqrt(19), abs=1e-12)
    assert sopf.chance_margin(0.05) == pytest.approx(4.3589, abs=1e-4)


def test_gaussian_margin():
    assert sopf.chance_margin(0.05, MarginRule.GAUSSIAN) == pytest.approx(1.6449, abs=1e-4)
    assert sopf.chance_margin(0.4999999, "GaussianApprox") == pytest.approx(0.0, abs=1e-5)


@pytest.mark.parametrize("eps", [0.0, 0.5, 0.6, -0.1])
def test_margin_range(eps):
    with pytest.raises(PreconditionError):
        sopf.chance_margin(eps)


@given(st.floats(0.001, 0.499))
def test_chebyshev_dominates_gaussian(eps):
    assert sopf.chance_margin(eps) >= sopf.chance_margin(eps, MarginRule.GAUSSIAN)


def test_expected_cost_examples():
    assert sopf.expected_cost([(1.0, 0.0, 0.0)], [1.0], [0.0]) == 1.0
    assert sopf.expected_cost([(1.0, 0.0, 0.0)], [1.0], [0.0125]) == pytest.approx(1.0125)
    assert sopf.expected_cost([(0.0, 0.0, 0.0)] * 2, [1.0, 2.0], [0.1, 0.2]) == 0.0


def test_problem_validation(model, mid_basis):
    with pytest.raises(PreconditionError):
        sopf.SopfProblem(model, mid_basis, epsilon=0.6)
    with pytest.raises(PreconditionError):
        sopf.SopfProblem(model, mid_basis, vdc_band=(1.1, 0.9))


def test_mid_solution_optimal(mid_sopf):
    s = mid_sopf
    assert s.optimal
    assert s.kkt_residual <= 1e-6
    assert s.min_slack() >= -1e-8
    assert set(s.references) == {"VSC1", "VSC2", "VSC3", "VSC4"}


def test_audit_rows_consistent(mid_sopf):
    lam = sopf.chance_margin(0.05)
    for r in mid_sopf.chance_audit:
        assert r.margin == pytest.approx(lam * r.std, rel=1e-9, abs=1e-12)
        if r.side == "upper":
            assert r.slack == pytest.approx(r.bound - r.mean - r.margin, abs=1e-9)
        else:
            assert r.slack == pytest.approx(r.mean - r.margin - r.bound, abs=1e-9)


def test_objective_is_expected_cost(mid_sopf):
    assert mid_sopf.objective == pytest.approx(sopf.solution_expected_cost(mid_sopf.states), rel=1e-9)


def test_zero_variance_reduces_to_opf(model, mid_specs):
    basis = pce.build_basis(mid_specs, 0)
    s = sopf.solve_sopf(sopf.SopfProblem(model, basis))
    opf = sopf.solve_opf(model, basis.germ_means * s.states.system.wind_pmax)
    assert s.optimal and opf.success
    for name, coeffs in s.policy.items():
        assert coeffs[0] == pytest.approx(opf.decisions[name], abs=1e-5)
    assert s.objective == pytest.approx(opf.objective, rel=1e-6)


def test_tight_band_infeasible(model, mid_basis):
    with pytest.raises(InfeasibleError) as exc:
        sopf.solve_sopf(sopf.SopfProblem(model, mid_basis, vdc_band=(0.999, 1.001)))
    assert exc.value.constraint.startswith("vdc:")


def test_monotone_caution(model, mid_basis):
    costs = []
    for eps in (0.10, 0.05, 0.01):
        s = sopf.solve_sopf(sopf.SopfProblem(model, mid_basis, eps))
        assert s.optimal
        costs.append(s.objective)
    assert costs[0] <= costs[1] + 1e-6 and costs[1] <= costs[2] + 1e-6


def test_interior_point_agrees(model, mid_basis, mid_sopf):
    s = sopf.solve_sopf(sopf.SopfProblem(model, mid_basis, 0.05), method="interior-point")
    assert s.kkt_residual <= 1e-6
    assert s.objective == pytest.approx(mid_sopf.objective, rel=1e-6)


def test_unknown_method(model, mid_basis):
    with pytest.raises(PreconditionError):
        sopf.solve_sopf(sopf.SopfProblem(model, mid_basis), method="newton")


def test_mc_audit_sound(mid_sopf):
    audit = sopf.mc_audit(mid_sopf, 10_000, seed=3)
    assert audit.n_failed == 0
    for name, rate in audit.violation_rate.items():
        assert rate <= 0.05 + 0.01, name


def test_gaussian_rule_cheaper(model, mid_basis, mid_sopf):
    s = sopf.solve_sopf(sopf.SopfProblem(model, mid_basis, 0.05, MarginRule.GAUSSIAN))
    assert s.optimal
    assert s.objective <= mid_sopf.objective + 1e-6


def test_opf_infeasible_report(model):
    with pytest.raises(InfeasibleError) as exc:
        sopf.solve_opf(model, [1.0, 1.0], vdc_band=(0.999, 1.001))
    assert exc.value.violation > 0


def test_export_csv(tmp_path, mid_sopf):
    p = tmp_path / "s.csv"
    sopf.export_csv(mid_sopf, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "section,name,side,mean,std,margin,bound,slack"
    assert sum(r.startswith("chance,") for r in rows) == len(mid_sopf.chance_audit)
    assert rows[-1].startswith("solver,optimal,")
