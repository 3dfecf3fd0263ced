"""Chance-constrained stochastic OPF in PCE coefficient space.

Decision variables are the PCE coefficients of the non-slack generator
outputs and of the droop station's power reference (the droop station is
dispatched as a constant-power converter with a random set-point), plus the
deterministic voltage set-point of the DC slack converter.  The AC slack
generators and all network states follow from the Galerkin power flow, so
the problem is solved in the reduced space with exact gradients obtained by
implicit differentiation of the Galerkin equations.

Every limited quantity ``y`` is tightened to ``mean(y) +/- lambda*std(y)``
inside its bounds, with ``lambda`` from :func:`chance_margin`.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import linalg, optimize, stats

from .errors import (ConvergenceError, InfeasibleError, PreconditionError, SolverStallError)
from .grid import ConverterMode, NetworkModel
from .pce import GalerkinSystem, PceBasis, PceSolution
from .powerflow import Dispatch, PowerFlowSystem, Quantity, solve_batch, solve_powerflow

log = logging.getLogger(__name__)

STD_FLOOR = 1e-16        # added under the square root to keep std differentiable at zero
ACTIVE_TOL = 1e-4
INNER_TOL = 1e-13      # Galerkin tolerance inside the optimiser (keeps gradients smooth)


class MarginRule(str, Enum):
    CHEBYSHEV = "ChebyshevOneSided"
    GAUSSIAN = "GaussianApprox"


def chance_margin(epsilon: float, rule=MarginRule.CHEBYSHEV) -> float:
    """Std multiplier lambda(epsilon) of the tightened constraint."""
    if not 0.0 < epsilon < 0.5:
        raise PreconditionError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    rule = MarginRule(rule)
    if rule is MarginRule.CHEBYSHEV:
        return math.sqrt((1.0 - epsilon) / epsilon)
    return float(stats.norm.ppf(1.0 - epsilon))


def expected_cost(cost_coeffs: Sequence[Sequence[float]], means, variances) -> float:
    """Sum over generators of E[c2 P^2 + c1 P + c0] from the first two moments."""
    total = 0.0
    for (c2, c1, c0), m, v in zip(cost_coeffs, means, variances):
        total += c2 * (m * m + v) + c1 * m + c0
    return float(total)


def solution_expected_cost(sol: PceSolution) -> float:
    """Expected generation cost of a Galerkin solution."""
    system = sol.system
    g = sol.basis.gamma
    C = sol.coefficients[:, system.ipg]
    means = C[0]
    variances = (g[1:, None] * C[1:] ** 2).sum(axis=0)
    return expected_cost([gen.cost for gen in system.model.generators], means, variances)


# ---------------------------------------------------------------------------
# decision layout shared by the deterministic and stochastic problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decision:
    name: str
    column: int          # position in the control vector
    random: bool         # PCE-expanded (True) or deterministic
    lower: float
    upper: float


def droop_modes(model: NetworkModel) -> dict[str, ConverterMode]:
    """Dispatch-time mode override: droop stations become constant-power."""
    return {c.id: ConverterMode.CONST_PQ for c in model.droop_converters()}


def decision_layout(system: PowerFlowSystem) -> list[Decision]:
    model = system.model
    out = []
    for i, g in enumerate(model.generators):
        if not system.gen_is_slack[i]:
            out.append(Decision(f"pg:{g.id}", int(system.cgp[i]), True, g.p_min, g.p_max))
    droop_ids = {c.id for c in model.droop_converters()}
    for i, c in enumerate(model.converters):
        if c.id in droop_ids:
            out.append(Decision(f"p_ref:{c.id}", int(system.ccp[i]), True, -c.p_rating, c.p_rating))
    for i, c in enumerate(model.converters):
        if system.modes[i] is ConverterMode.DC_SLACK:
            out.append(Decision(f"v_set:{c.id}", int(system.ccv[i]), False, c.v_min, c.v_max))
    return out


def limit_table(system: PowerFlowSystem, vdc_band: Optional[tuple[float, float]] = None,
                overrides: Optional[Mapping[str, tuple[float, float]]] = None) -> list[Quantity]:
    """Limited quantities with optional DC band and per-name bound overrides."""
    out = []
    for q in system.limit_quantities():
        lo, hi = q.lower, q.upper
        if vdc_band is not None and q.kind == "vdc":
            lo, hi = vdc_band
        if overrides and q.name in overrides:
            lo, hi = overrides[q.name]
        out.append(Quantity(q.name, q.kind, q.index, lo, hi))
    return out


def _dispatch_from(system: PowerFlowSystem, layout: Sequence[Decision], values: Mapping[str, float],
                   extra_v: Optional[Mapping[str, float]] = None) -> Dispatch:
    model = system.model
    gen_p, conv_p, conv_v = {}, {}, dict(extra_v or {})
    for d in layout:
        kind, eid = d.name.split(":", 1)
        if kind == "pg":
            gen_p[eid] = values[d.name]
        elif kind == "p_ref":
            conv_p[eid] = values[d.name]
        else:
            conv_v[eid] = values[d.name]
    conv_k = {c.id: c.droop.k for c in model.droop_converters()}
    return Dispatch(gen_p=gen_p, conv_p=conv_p, conv_v=conv_v, conv_k=conv_k)


# ---------------------------------------------------------------------------
# deterministic OPF (full space)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OpfResult:
    decisions: dict[str, float]
    dispatch: Dispatch
    state: np.ndarray
    ctrl: np.ndarray
    system: PowerFlowSystem
    objective: float
    success: bool
    message: str
    max_violation: float

    def conv_power(self, conv_id: str) -> float:
        return float(self.system.conv_power(self.state, self.ctrl, conv_id))


def _most_violated(names, values):
    i = int(np.argmin(values))
    return names[i], float(-values[i])


def solve_opf(model: NetworkModel, wind, *, vdc_band: Optional[tuple[float, float]] = None,
              overrides: Optional[Mapping[str, tuple[float, float]]] = None,
              ftol: float = 1e-12, max_iter: int = 500, x0=None,
              raise_on_infeasible: bool = True) -> OpfResult:
    """Deterministic AC/DC OPF for one wind injection (p.u.).

    States and decisions are optimised jointly with the power-flow equations
    as equality constraints (SLSQP).  Infeasibility raises
    :class:`InfeasibleError` naming the most violated limit.
    """
    system = PowerFlowSystem(model, droop_modes(model))
    layout = decision_layout(system)
    limits = limit_table(system, vdc_band, overrides)
    w = np.asarray(wind, float)
    n, nd = system.n, len(layout)
    cols = np.array([d.column for d in layout], int)
    base = system.controls()
    costs = np.array([g.cost for g in model.generators])
    ipg = system.ipg

    def ctrl_of(z):
        u = base.copy()
        u[cols] = z[n:]
        return u

    def fobj(z):
        p = z[ipg]
        return float(np.sum(costs[:, 0] * p * p + costs[:, 1] * p + costs[:, 2]))

    def gobj(z):
        g = np.zeros_like(z)
        g[ipg] = 2.0 * costs[:, 0] * z[ipg] + costs[:, 1]
        return g

    def feq(z):
        return system.residual(z[:n], w, ctrl_of(z))

    def jeq(z):
        u = ctrl_of(z)
        return np.hstack([system.jacobian(z[:n], w, u), system.control_jacobian(z[:n], w, u)[:, cols]])

    ineq_names = []
    for q in limits:
        if np.isfinite(q.upper):
            ineq_names.append(f"{q.name}<=max")
        if np.isfinite(q.lower):
            ineq_names.append(f"{q.name}>=min")

    def fin(z):
        u = ctrl_of(z)
        out = []
        for q in limits:
            val = float(system.quantity(q, z[:n], u))
            if np.isfinite(q.upper):
                out.append(q.upper - val)
            if np.isfinite(q.lower):
                out.append(val - q.lower)
        return np.array(out)

    def jin(z):
        u = ctrl_of(z)
        rows = []
        for q in limits:
            _, g = system.quantity(q, z[:n], u, grad=True)
            g = np.concatenate([g, np.zeros(nd)])
            if np.isfinite(q.upper):
                rows.append(-g)
            if np.isfinite(q.lower):
                rows.append(g)
        return np.array(rows)

    # starting point: power flow with the model's default set-points
    dec0 = np.array([np.clip(base[d.column], d.lower, d.upper) for d in layout])
    u0 = base.copy()
    u0[cols] = dec0
    if x0 is None:
        pf = solve_powerflow(model, w, system=system, ctrl=u0)
        x0 = pf.state.x if pf.converged else system.flat_start(u0)
    z0 = np.concatenate([x0, dec0])
    scale = 1.0 / max(1.0, abs(fobj(z0)))
    bounds = [(None, None)] * n + [(d.lower, d.upper) for d in layout]

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = optimize.minimize(lambda z: fobj(z) * scale, z0, jac=lambda z: gobj(z) * scale,
                                method="SLSQP", bounds=bounds,
                                constraints=[{"type": "eq", "fun": feq, "jac": jeq},
                                             {"type": "ineq", "fun": fin, "jac": jin}],
                                options={"ftol": ftol, "maxiter": max_iter})
    z = res.x
    slack = fin(z)
    eq_viol = float(np.max(np.abs(feq(z))))
    max_viol = max(eq_viol, float(-min(0.0, slack.min())))
    ok = bool(res.success) and max_viol <= 1e-6
    if not ok and raise_on_infeasible:
        name, viol = _most_violated(ineq_names, slack)
        if viol <= 1e-6 and eq_viol > 1e-6:
            name, viol = "power balance", eq_viol
        raise InfeasibleError(f"deterministic OPF infeasible ({res.message}); most violated: "
                              f"{name} by {viol:.4g} p.u.", constraint=name, violation=viol)
    decisions = {d.name: float(z[n + i]) for i, d in enumerate(layout)}
    u = ctrl_of(z)
    x = z[:n]
    extra_v = {c.id: float(system.dc_voltage(x, c.id)) for c in model.droop_converters()}
    return OpfResult(decisions, _dispatch_from(system, layout, decisions, extra_v), x, u, system,
                     fobj(z), ok, str(res.message), max_viol)


# ---------------------------------------------------------------------------
# stochastic OPF
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SopfProblem:
    model: NetworkModel
    basis: PceBasis
    epsilon: float = 0.05
    margin_rule: MarginRule = MarginRule.CHEBYSHEV
    vdc_band: Optional[tuple[float, float]] = None
    overrides: Optional[Mapping[str, tuple[float, float]]] = None
    tol: float = 1e-6
    max_iter: int = 200

    def __post_init__(self):
        chance_margin(self.epsilon, self.margin_rule)
        if self.vdc_band is not None and not self.vdc_band[0] < self.vdc_band[1]:
            raise PreconditionError("DC voltage band must satisfy lower < upper")
        object.__setattr__(self, "margin_rule", MarginRule(self.margin_rule))

    @property
    def mean_wind(self) -> np.ndarray:
        return self.basis.germ_means * np.array([w.p_max for w in self.model.wind_farms])


@dataclass(frozen=True)
class AuditRow:
    constraint: str
    side: str
    mean: float
    std: float
    margin: float
    bound: float
    slack: float


@dataclass(frozen=True, eq=False)
class SopfSolution:
    dispatch: Dispatch
    references: dict[str, tuple[float, float]]    # converter id -> (P_ref, V_ref)
    states: PceSolution
    objective: float
    kkt_residual: float
    chance_audit: list[AuditRow]
    policy: dict[str, np.ndarray]                 # decision name -> coefficients
    status: str
    iterations: int
    problem: SopfProblem = field(repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def min_slack(self) -> float:
        return min((r.slack for r in self.chance_audit), default=float("inf"))


class _Evaluator:
    """Reduced-space objective/constraints with implicit-function gradients."""

    def __init__(self, problem: SopfProblem):
        model = problem.model
        self.problem = problem
        self.system = PowerFlowSystem(model, droop_modes(model))
        self.gal = GalerkinSystem(self.system, problem.basis)
        self.layout = decision_layout(self.system)
        self.limits = limit_table(self.system, problem.vdc_band, problem.overrides)
        self.lam = chance_margin(problem.epsilon, problem.margin_rule)
        self.K1 = problem.basis.size
        self.gamma = problem.basis.gamma
        m = self.system.m
        ks, cols, self.var_names = [], [], []
        for d in self.layout:
            rng = range(self.K1) if d.random else range(1)
            for k in rng:
                ks.append(k)
                cols.append(d.column)
                self.var_names.append((d.name, k))
        self.ks, self.cols = np.array(ks, int), np.array(cols, int)
        # optimiser works on coefficients scaled to unit basis norm
        self.vscale = 1.0 / np.sqrt(self.gamma[self.ks])
        wstd = np.array([s.std for s in problem.basis.beta_specs]) * self.system.wind_pmax
        self.policy_bound = max(float(np.sum(wstd)), 1e-6)
        self.flat = self.ks * m + self.cols
        self.nu = len(ks)
        self.base = self.gal.control_coeffs(self.system.controls())
        self.costs = np.array([g.cost for g in model.generators])
        self.con_names = []
        for q in self.limits:
            if np.isfinite(q.upper):
                self.con_names.append((q.name, "upper"))
            if np.isfinite(q.lower):
                self.con_names.append((q.name, "lower"))
        self.X = None
        self.X0 = None
        self._key = None
        self._vals = None
        self.scale = 1.0
        self.offset = 0.0

    def bounds(self):
        lo, hi = [], []
        for (name, k) in self.var_names:
            d = next(x for x in self.layout if x.name == name)
            if k == 0:
                lo.append(d.lower)
                hi.append(d.upper)
            else:
                # a policy term cannot sensibly exceed the total wind spread
                lo.append(-self.policy_bound)
                hi.append(self.policy_bound)
        return np.array(lo), np.array(hi)

    def controls(self, u):
        U = self.base.copy()
        U[self.ks, self.cols] = np.asarray(u) * self.vscale
        return U

    def initial(self, opf: OpfResult) -> np.ndarray:
        return np.array([opf.decisions[name] if k == 0 else 0.0 for name, k in self.var_names])

    def evaluate(self, u):
        key = np.asarray(u, float).tobytes()
        if key == self._key:
            return self._vals
        U = self.controls(u)
        X, it, norm, ok = self.gal.solve(U, self.X, tol=INNER_TOL)
        if not ok and self.X0 is not None:
            X, it, norm, ok = self.gal.solve(U, self.X0, tol=INNER_TOL)
        if not ok:
            raise ConvergenceError(f"Galerkin power flow failed inside SOPF (residual {norm:.3e})", best=X)
        self.X = X
        n, K1 = self.system.n, self.K1
        lu = linalg.lu_factor(self.gal.jacobian(X, U))
        JU = self.gal.control_jacobian(X, U)[:, self.flat] * self.vscale
        dX = -linalg.lu_solve(lu, JU)                 # (K1*n, nu)

        g = self.gamma
        P = X[:, self.system.ipg]                     # (K1, ng)
        c2, c1, c0 = self.costs.T
        var = (g[1:, None] * P[1:] ** 2).sum(0)
        f = float(np.sum(c2 * (P[0] ** 2 + var) + c1 * P[0] + c0))
        dfdP = np.zeros((K1, self.system.ng))
        dfdP[0] = 2.0 * c2 * P[0] + c1
        dfdP[1:] = 2.0 * c2 * g[1:, None] * P[1:]
        dfdX = np.zeros((K1, n))
        dfdX[:, self.system.ipg] = dfdP
        grad = dfdX.ravel() @ dX

        cons, jac, audit = [], [], []
        for q in self.limits:
            coef, dcoef = self.gal.project_quantity(q, X, U, grad=True)
            dc = dcoef @ dX                           # (K1, nu)
            mean = coef[0]
            std = math.sqrt(float(np.sum(g[1:] * coef[1:] ** 2)) + STD_FLOOR)
            dstd = (g[1:] * coef[1:]) @ dc[1:] / std
            if np.isfinite(q.upper):
                cons.append(q.upper - mean - self.lam * std)
                jac.append(-dc[0] - self.lam * dstd)
                audit.append((q.name, "upper", mean, std, q.upper))
            if np.isfinite(q.lower):
                cons.append(mean - self.lam * std - q.lower)
                jac.append(dc[0] - self.lam * dstd)
                audit.append((q.name, "lower", mean, std, q.lower))
        self._key = key
        self._vals = (f, grad, np.array(cons), np.array(jac), audit, X, U)
        return self._vals

    def active_system(self, u):
        """Scaled gradient, active constraint rows and their gaps at ``u``."""
        f, grad, cons, jac, _, _, _ = self.evaluate(u)
        lo, hi = self.bounds()
        eye = np.eye(self.nu)
        rows, gaps, kinds = [], [], []
        for i in np.flatnonzero(cons <= ACTIVE_TOL):
            rows.append(jac[i])
            gaps.append(cons[i])
            kinds.append(("con", i))
        for i in np.flatnonzero(u - lo <= ACTIVE_TOL):
            rows.append(eye[i])
            gaps.append(u[i] - lo[i])
            kinds.append(("lo", i))
        for i in np.flatnonzero(hi - u <= ACTIVE_TOL):
            rows.append(-eye[i])
            gaps.append(hi[i] - u[i])
            kinds.append(("hi", i))
        A = np.array(rows).reshape(-1, self.nu)
        return grad * self.scale, A, np.array(gaps), kinds

    def kkt(self, u) -> float:
        """Max of scaled stationarity, complementarity and constraint violation."""
        gs, A, gaps, _ = self.active_system(u)
        _, _, cons, _, _, _, _ = self.evaluate(u)
        lo, hi = self.bounds()
        comp = 0.0
        if len(A):
            mult, _ = optimize.nnls(A.T, gs)
            stat = gs - A.T @ mult
            comp = float(np.max(np.abs(mult * np.maximum(gaps, 0.0))))
        else:
            stat = gs
        viol = max(0.0, float(-cons.min()), float(np.max(lo - u, initial=0.0)),
                   float(np.max(u - hi, initial=0.0)))
        return max(float(np.max(np.abs(stat))), viol, comp)


def solve_sopf(problem: SopfProblem, *, method: str = "sqp",
               raise_on_stall: bool = False) -> SopfSolution:
    """Chance-constrained SOPF; checks the deterministic OPF at mean wind first.

    ``method`` is ``"sqp"`` (default) or ``"interior-point"`` (scipy
    trust-constr with BFGS Hessians; slower on this problem class).  Either way
    the reported ``kkt_residual`` is recomputed independently of the solver.
    """
    model = problem.model
    opf = solve_opf(model, problem.mean_wind, vdc_band=problem.vdc_band, overrides=problem.overrides)
    ev = _Evaluator(problem)
    X0 = np.zeros((ev.K1, ev.system.n))
    X0[0] = opf.state
    ev.X = ev.X0 = X0
    u0 = ev.initial(opf)
    f0, g0 = ev.evaluate(u0)[:2]
    ev.scale = 1.0 / max(1e-12, float(np.max(np.abs(g0))))
    ev.offset = f0
    lo, hi = ev.bounds()
    lo_b = np.where(np.isfinite(lo), lo, -np.inf)
    hi_b = np.where(np.isfinite(hi), hi, np.inf)

    fun = lambda u: (ev.evaluate(u)[0] - ev.offset) * ev.scale
    jac = lambda u: ev.evaluate(u)[1] * ev.scale
    cfun = lambda u: ev.evaluate(u)[2]
    cjac = lambda u: ev.evaluate(u)[3]

    slsqp_bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))

    def run_slsqp(start):
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
            return optimize.minimize(fun, start, jac=jac, method="SLSQP", bounds=slsqp_bounds,
                                     constraints=[{"type": "ineq", "fun": cfun, "jac": cjac}],
                                     options={"ftol": 1e-16, "maxiter": problem.max_iter})

    def run_ip(start, barrier, radius):
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", "delta_grad == 0.0", UserWarning)
            return _run_ip(start, barrier, radius)

    def _run_ip(start, barrier, radius):
        return optimize.minimize(
            fun, start, jac=jac, hess=optimize.BFGS(), method="trust-constr",
            bounds=optimize.Bounds(lo_b, hi_b),
            constraints=[optimize.NonlinearConstraint(cfun, 0.0, np.inf, jac=cjac, hess=optimize.BFGS())],
            options={"gtol": problem.tol * 1e-2, "xtol": 1e-14, "barrier_tol": 1e-10,
                     "maxiter": problem.max_iter, "initial_barrier_parameter": barrier,
                     "initial_tr_radius": radius})

    if method == "sqp":
        # SQP from the deterministic optimum, restarted (fresh quasi-Newton
        # metric) while the KKT target is missed
        res = run_slsqp(u0)
        iters = int(res.nit)
        for _ in range(3):
            if ev.kkt(res.x) <= problem.tol:
                break
            again = run_slsqp(res.x)
            iters += int(again.nit)
            if ev.kkt(again.x) < ev.kkt(res.x):
                res = again
    elif method == "interior-point":
        res = run_ip(u0, 1e-3, 1.0)
        iters = int(res.nit)
    else:
        raise PreconditionError(f"unknown SOPF method {method!r}")

    u = res.x
    kkt = ev.kkt(u)
    f, _, cons, _, audit, X, U = ev.evaluate(u)
    if cons.min() < -1e-6:
        i = int(np.argmin(cons))
        name = f"{ev.con_names[i][0]} ({ev.con_names[i][1]})"
        raise InfeasibleError(f"SOPF infeasible: chance constraint {name} violated by {-cons[i]:.4g} p.u.",
                              constraint=name, violation=float(-cons[i]))
    status = "optimal" if kkt <= problem.tol else "stalled"
    if status == "stalled":
        log.warning("SOPF stopped with KKT residual %.3e (%s)", kkt, res.message)
        if raise_on_stall:
            raise SolverStallError(f"SOPF did not reach KKT tolerance ({kkt:.3e})", best=u)
    return _package(problem, ev, u, f, kkt, cons, audit, X, U, status, iters)


def _package(problem, ev, u, f, kkt, cons, audit, X, U, status, iters) -> SopfSolution:
    system = ev.system
    states = PceSolution(ev.gal, X, U, True, float(np.max(np.abs(ev.gal.residual(X, U)))))
    policy = {}
    for d in ev.layout:
        policy[d.name] = U[:, d.column].copy() if d.random else np.array([U[0, d.column]])
    means = {d.name: float(policy[d.name][0]) for d in ev.layout}
    refs = {}
    for c in problem.model.converters:
        p = float(states.coeffs(f"pconv:{c.id}")[0])
        v = float(states.coeffs(f"vdc:{c.dc_bus}")[0])
        refs[c.id] = (p, v)
    extra_v = {c.id: refs[c.id][1] for c in problem.model.droop_converters()}
    disp = _dispatch_from(system, ev.layout, means, extra_v)
    # droop stations take the expected power as reference
    disp = Dispatch(gen_p=disp.gen_p, conv_p={**disp.conv_p, **{c.id: refs[c.id][0]
                                                               for c in problem.model.droop_converters()}},
                    conv_v=disp.conv_v, conv_k=disp.conv_k)
    rows = [AuditRow(name, side, float(m), float(s), float(ev.lam * s), float(b), float(c))
            for (name, side, m, s, b), c in zip(audit, cons)]
    return SopfSolution(disp, refs, states, f, kkt, rows, policy, status, iters, problem)


# ---------------------------------------------------------------------------
# Monte-Carlo audit and export
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McAudit:
    n_samples: int
    n_failed: int
    violation_rate: dict[str, float]
    mean: dict[str, float]
    std: dict[str, float]


def mc_audit(sol: SopfSolution, n_samples: int = 10_000, seed=0, *,
             names: Optional[Sequence[str]] = None) -> McAudit:
    """Sample the wind, apply the PCE control policy, and solve each power flow.

    Violation rates count samples outside the (untightened) bounds of each
    limited quantity.  Samples whose power flow fails are reported, not dropped.
    """
    basis = sol.states.basis
    system = sol.states.system
    xi = basis.sample_germs(n_samples, seed)
    wind = xi * system.wind_pmax
    ctrl = basis.evaluate(xi) @ sol.states.controls
    X, ok = solve_batch(system, wind, ctrl, sol.states.coefficients[0])
    limits = limit_table(system, sol.problem.vdc_band, sol.problem.overrides)
    rate, mean, std = {}, {}, {}
    for q in limits:
        if names is not None and q.name not in names:
            continue
        y = system.quantity(q, X[ok], ctrl[ok])
        bad = (y > q.upper + 1e-12) | (y < q.lower - 1e-12)
        rate[q.name] = float(np.mean(bad)) if y.size else float("nan")
        mean[q.name] = float(np.mean(y))
        std[q.name] = float(np.std(y, ddof=1))
    return McAudit(n_samples, int((~ok).sum()), rate, mean, std)


def export_csv(sol: SopfSolution, path) -> None:
    """Dispatch block followed by the chance-audit table."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "name", "side", "mean", "std", "margin", "bound", "slack"])
        for name, coeffs in sol.policy.items():
            std = math.sqrt(float(np.sum(sol.states.basis.gamma[1:len(coeffs)] * coeffs[1:] ** 2)))
            w.writerow(["dispatch", name, "", repr(float(coeffs[0])), repr(std), "", "", ""])
        for cid, (p, v) in sol.references.items():
            w.writerow(["reference", f"p_ref:{cid}", "", repr(p), "", "", "", ""])
            w.writerow(["reference", f"v_ref:{cid}", "", repr(v), "", "", "", ""])
        for r in sol.chance_audit:
            w.writerow(["chance", r.constraint, r.side, repr(r.mean), repr(r.std), repr(r.margin),
                        repr(r.bound), repr(r.slack)])
        w.writerow(["objective", "expected_cost", "", repr(sol.objective), "", "", "", ""])
        w.writerow(["solver", sol.status, "", repr(sol.kkt_residual), "", "", "", ""])
