import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sopfdroop import pce, powerflow, wind
from sopfdroop.errors import DimensionError, PreconditionError
from sopfdroop.powerflow import Dispatch, PowerFlowSystem
from sopfdroop.wind import BetaSpec, DEFAULT_ZONE_STATS, Zone

from oracles import beta_raw_moment, lhs_beta

shapes = st.floats(min_value=1.0, max_value=40.0)


def spec(a, b):
    return BetaSpec(a, b, a / (a + b))


@pytest.mark.parametrize("n,d,size", [(2, 2, 6), (1, 0, 1), (3, 2, 10), (2, 3, 10), (1, 4, 5)])
def test_basis_size(n, d, size):
    b = pce.build_basis([spec(2.0, 3.0)] * n, d)
    assert b.size == size == math.comb(n + d, d)


def test_multi_index_order():
    assert pce.total_degree_indices(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_gauss_jacobi_midpoint():
    x, w = pce.gauss_jacobi(spec(1.0, 1.0), 1)
    assert x == pytest.approx([0.5]) and w == pytest.approx([1.0])


@settings(max_examples=20)
@given(shapes, shapes)
def test_gauss_jacobi_third_moment(a, b):
    x, w = pce.gauss_jacobi(spec(a, b), 4)
    assert np.sum(w * x ** 3) == pytest.approx(beta_raw_moment(a, b, 3), abs=1e-12)
    assert np.sum(w) == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=20)
@given(shapes, shapes, st.integers(1, 6))
def test_gauss_jacobi_exactness(a, b, n):
    x, w = pce.gauss_jacobi(spec(a, b), n)
    for r in range(2 * n):
        assert np.sum(w * x ** r) == pytest.approx(beta_raw_moment(a, b, r), rel=1e-10, abs=1e-13)


@settings(max_examples=10, deadline=None)
@given(shapes, shapes, shapes, shapes)
def test_orthogonality(a1, b1, a2, b2):
    basis = pce.build_basis([spec(a1, b1), spec(a2, b2)], 2)
    # independent, finer rule than the one used inside the basis
    b_fine = pce.build_basis([spec(a1, b1), spec(a2, b2)], 2, n_quad=8)
    P = b_fine.phi_nodes
    gram = (P * b_fine.weights[:, None]).T @ P
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) <= 1e-10
    assert np.allclose(np.diag(gram), basis.gamma, rtol=1e-10)
    assert basis.gamma[0] == pytest.approx(1.0) and np.all(basis.gamma > 0)


def test_triple_products_match_quadrature(mid_basis):
    b = mid_basis
    fine = pce.build_basis(b.beta_specs, 2, n_quad=8)
    I, J, K, V = b.triple_products
    P = fine.phi_nodes
    ref = np.einsum("q,qi,qj,qk->ijk", fine.weights, P, P, P)
    dense = np.zeros_like(ref)
    dense[I, J, K] = V
    assert np.max(np.abs(dense - ref)) < 1e-12 * np.max(np.abs(ref))


def test_moments_example():
    m, v = pce.coefficient_moments([1.0, 0.1, 0.05], [1.0, 1.0, 1.0])
    assert m == 1.0 and v == pytest.approx(0.0125, abs=1e-15)
    assert pce.coefficient_moments([3.0, 0.0, 0.0], [1, 2, 3]) == (3.0, 0.0)
    assert pce.coefficient_moments([2.5, 7.0, -4.0], [1, 1, 1])[0] == 2.5


def test_moments_match_quadrature(mid_galerkin):
    sol = mid_galerkin
    fine = pce.build_basis(sol.basis.beta_specs, 2, n_quad=8)
    for name in ("vdc:D4", "pconv:VSC4", "pg:GA1", "e:B7"):
        c = sol.coeffs(name)
        vals = fine.phi_nodes @ c
        mean = np.sum(fine.weights * vals)
        var = np.sum(fine.weights * (vals - mean) ** 2)
        m, v = pce.moments(sol, name)
        assert m == pytest.approx(mean, abs=1e-10)
        assert v == pytest.approx(var, abs=1e-10)


def test_unknown_variable(mid_galerkin):
    with pytest.raises(KeyError):
        pce.moments(mid_galerkin, "vdc:D9")


def test_galerkin_converges(mid_galerkin):
    assert mid_galerkin.converged and mid_galerkin.residual_norm <= 1e-8
    assert mid_galerkin.coefficients.shape == (6, mid_galerkin.system.n)


def test_zero_uncertainty_reduction(model, mid_specs):
    basis = pce.build_basis(mid_specs, 0)
    sol = pce.galerkin_solve(model, basis)
    mean_wind = basis.germ_means * sol.system.wind_pmax
    det = powerflow.solve_powerflow(model, mean_wind, raise_on_fail=True)
    assert sol.coefficients.shape[0] == 1
    assert np.max(np.abs(sol.coefficients[0] - det.state.x)) <= 1e-8


def test_dimension_mismatch(model):
    basis = pce.build_basis([spec(2, 3)] * 3, 1)
    with pytest.raises(DimensionError):
        pce.galerkin_solve(model, basis)


def test_control_coefficient_shape(model, mid_basis):
    with pytest.raises(DimensionError):
        pce.galerkin_solve(model, mid_basis, control_coeffs=np.zeros((2, 3)))


def test_mean_of_basis_evaluation(mid_basis):
    ev = mid_basis.evaluate(mid_basis.germ_means[None, :])[0]
    # first-order polynomials vanish at the germ mean
    for d in range(2):
        assert abs(ev[mid_basis.first_order_index(d)]) < 1e-12


def test_sensitivity_linear_recovery(mid_basis):
    b = mid_basis
    coeffs = b.projector() @ (2.0 * b.nodes[:, 0])
    fake = SimpleNamespace(basis=b, coeffs=lambda name: coeffs)
    assert pce.sensitivity(fake, "x", 0) == pytest.approx(2.0, abs=1e-10)
    assert pce.sensitivity(fake, "x", 1) == pytest.approx(0.0, abs=1e-10)


def test_sensitivity_needs_degree(model, mid_specs):
    sol = pce.galerkin_solve(model, pce.build_basis(mid_specs, 0))
    with pytest.raises(PreconditionError):
        pce.sensitivity(sol, "vdc:D4", 0)


def _fd(model, wind_mean, dim, var, h=1e-3):
    sys_ = PowerFlowSystem(model)
    pmax = sys_.wind_pmax
    vals = []
    for s in (+1, -1):
        w = np.array(wind_mean, float)
        w[dim] += s * h
        st_ = powerflow.solve_powerflow(model, w, system=sys_, raise_on_fail=True, tol=1e-12).state
        q = next(q for q in sys_.limit_quantities() if q.name == var)
        vals.append(float(sys_.quantity(q, st_.x, st_.ctrl)))
    # d var / d xi = d var / d p * p_max
    return (vals[0] - vals[1]) / (2 * h) * pmax[dim]


def test_sensitivity_vs_finite_difference(model, mid_galerkin):
    sol = mid_galerkin
    wm = sol.basis.germ_means * sol.system.wind_pmax
    for var in ("vdc:D4", "pconv:VSC4", "vdc:D2"):
        for d in range(2):
            fd = _fd(model, wm, d, var)
            assert pce.sensitivity(sol, var, d) == pytest.approx(fd, rel=0.02)


def test_mc_agreement_random_dispatches(model):
    """Ten random dispatches, Mid-zone germs: every voltage within 1e-3 mean / 5% std of MC."""
    rng = np.random.default_rng(4)
    specs = [wind.beta_spec(0.5, DEFAULT_ZONE_STATS[Zone.MID]), wind.beta_spec(0.4, DEFAULT_ZONE_STATS[Zone.MID])]
    basis = pce.build_basis(specs, 2)
    xi = lhs_beta(specs, 10_000, 8)
    for _ in range(10):
        disp = Dispatch(gen_p={g: rng.uniform(0.5, 1.5) for g in ("GA2", "GA3", "GB2", "GB3")},
                        conv_p={"VSC4": rng.uniform(-2.5, -1.0)}, conv_v={"VSC1": rng.uniform(0.97, 1.05)})
        sol = pce.galerkin_solve(model, basis, disp)
        sys_ = sol.system
        X, ok = powerflow.solve_batch(sys_, xi * sys_.wind_pmax, sol.controls[0], sol.coefficients[0])
        assert ok.all()
        names = sol.variable_names()
        for name in [n for n in names if n[:2] in ("e:", "f:", "vd")]:
            col = X[:, names.index(name)]
            m, v = pce.moments(sol, name)
            assert abs(m - col.mean()) < 1e-3
            sd = col.std(ddof=1)
            if sd > 1e-6:
                assert math.sqrt(v) == pytest.approx(sd, rel=0.05)


def test_export_csv(tmp_path, mid_galerkin):
    p = tmp_path / "c.csv"
    pce.export_csv(mid_galerkin, p, ["vdc:D4"])
    lines = p.read_text().splitlines()
    assert lines[0] == "variable,k,multi_index,coefficient"
    assert len(lines) == 7 and lines[2].startswith("vdc:D4,1,1-0,")
