"""Polynomial chaos on independent Beta germs and the Galerkin stochastic power flow.

Germs are the Beta-distributed normalised wind outputs themselves
(``xi_i`` in [0, 1]); farm ``i`` injects ``xi_i * p_max_i``.  Each germ gets
the classical Jacobi polynomials ``P_n^(beta-1, alpha-1)(2 xi - 1)``, which
are orthogonal under Beta(alpha, beta); the multivariate basis is the
total-degree product set.

Galerkin projections ``<g(x(xi), xi), Phi_k>`` are evaluated with the tensor
Gauss-Jacobi rule of ``degree + 2`` nodes per germ.  That rule integrates
every residual of degree <= 2 in the state exactly, so it coincides with the
triple-product formulation for all power-flow equations except the ``b|I|``
converter-loss term.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import ConvergenceError, DimensionError, PreconditionError
from .grid import NetworkModel
from .powerflow import (Dispatch, PowerFlowSystem, Quantity, newton, solve_powerflow)
from .wind import BetaSpec

TOL = 1e-8
MAX_ITER = 50
TRIPLE_DROP = 1e-14


def gauss_jacobi(spec: BetaSpec, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the Beta(alpha, beta) probability measure on [0, 1].

    Exact for polynomials of degree ``2*n_nodes - 1``; weights sum to one.
    """
    if n_nodes < 1:
        raise PreconditionError("n_nodes must be >= 1")
    x, w = special.roots_jacobi(n_nodes, spec.beta - 1.0, spec.alpha - 1.0)
    return 0.5 * (x + 1.0), w / w.sum()


def jacobi_1d(spec: BetaSpec, n: int, xi) -> np.ndarray:
    """Degree-``n`` Jacobi polynomial of germ ``xi`` for the given Beta law."""
    return special.eval_jacobi(n, spec.beta - 1.0, spec.alpha - 1.0, 2.0 * np.asarray(xi, float) - 1.0)


def jacobi_1d_deriv(spec: BetaSpec, n: int, xi) -> np.ndarray:
    """d/dxi of :func:`jacobi_1d`."""
    xi = np.asarray(xi, float)
    if n == 0:
        return np.zeros_like(xi)
    a, b = spec.beta - 1.0, spec.alpha - 1.0
    return (n + a + b + 1.0) * special.eval_jacobi(n - 1, a + 1.0, b + 1.0, 2.0 * xi - 1.0)


def total_degree_indices(n_dims: int, degree: int) -> list[tuple[int, ...]]:
    """Graded multi-indices: constant first, then each degree block in reverse-lex order."""
    out = []
    for t in range(degree + 1):
        block = [m for m in itertools.product(range(t + 1), repeat=n_dims) if sum(m) == t]
        out.extend(sorted(block, reverse=True))
    return out


@dataclass(frozen=True, eq=False)
class PceBasis:
    n_dims: int
    degree: int
    multi_indices: tuple[tuple[int, ...], ...]
    gamma: np.ndarray
    beta_specs: tuple[BetaSpec, ...]
    quadrature: tuple[tuple[np.ndarray, np.ndarray], ...]
    nodes: np.ndarray            # tensor grid, (Q, n_dims)
    weights: np.ndarray          # (Q,)
    phi_nodes: np.ndarray        # basis at grid nodes, (Q, K+1)
    triple_products: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.multi_indices)

    def first_order_index(self, dim: int) -> int:
        if self.degree < 1:
            raise PreconditionError("degree-0 basis has no first-order terms")
        target = tuple(1 if i == dim else 0 for i in range(self.n_dims))
        return self.multi_indices.index(target)

    @property
    def germ_means(self) -> np.ndarray:
        return np.array([s.mean for s in self.beta_specs])

    def evaluate(self, xi) -> np.ndarray:
        """Basis values at germ points ``xi`` of shape (S, n_dims) -> (S, K+1)."""
        xi = np.atleast_2d(np.asarray(xi, float))
        if xi.shape[1] != self.n_dims:
            raise DimensionError(f"germ points have {xi.shape[1]} dims, basis has {self.n_dims}")
        uni = [[jacobi_1d(s, n, xi[:, i]) for n in range(self.degree + 1)]
               for i, s in enumerate(self.beta_specs)]
        out = np.ones((xi.shape[0], self.size))
        for k, mi in enumerate(self.multi_indices):
            for i, n in enumerate(mi):
                if n:
                    out[:, k] *= uni[i][n]
        return out

    def gradient(self, xi) -> np.ndarray:
        """d Phi_k / d xi_i at points (S, n_dims) -> (S, K+1, n_dims)."""
        xi = np.atleast_2d(np.asarray(xi, float))
        val = [[jacobi_1d(s, n, xi[:, i]) for n in range(self.degree + 1)]
               for i, s in enumerate(self.beta_specs)]
        der = [[jacobi_1d_deriv(s, n, xi[:, i]) for n in range(self.degree + 1)]
               for i, s in enumerate(self.beta_specs)]
        out = np.zeros((xi.shape[0], self.size, self.n_dims))
        for k, mi in enumerate(self.multi_indices):
            for d in range(self.n_dims):
                term = np.ones(xi.shape[0])
                for i, n in enumerate(mi):
                    term = term * (der[i][n] if i == d else val[i][n])
                out[:, k, d] = term
        return out

    def sample_germs(self, n: int, seed) -> np.ndarray:
        """Independent Beta draws of every germ (inverse CDF), shape (n, n_dims)."""
        rng = np.random.default_rng(seed)
        u = rng.random((n, self.n_dims))
        return np.column_stack([special.betaincinv(s.alpha, s.beta, u[:, i])
                                for i, s in enumerate(self.beta_specs)])

    def projector(self) -> np.ndarray:
        """Matrix mapping node values to PCE coefficients, shape (K+1, Q)."""
        return (self.phi_nodes * self.weights[:, None]).T / self.gamma[:, None]


def build_basis(beta_specs: Sequence[BetaSpec], degree: int, n_quad: Optional[int] = None) -> PceBasis:
    """Total-degree Jacobi basis for independent Beta germs."""
    if degree < 0:
        raise PreconditionError("degree must be >= 0")
    specs = tuple(beta_specs)
    n_dims = len(specs)
    nq = degree + 2 if n_quad is None else n_quad
    mis = tuple(total_degree_indices(n_dims, degree))

    quad = tuple(gauss_jacobi(s, nq) for s in specs)
    # 1D norms with a rule exact for degree 2*degree
    g1 = []
    for s in specs:
        x, w = gauss_jacobi(s, degree + 1)
        g1.append([float(np.sum(w * jacobi_1d(s, n, x) ** 2)) for n in range(degree + 1)])
    gamma = np.array([math.prod(g1[i][n] for i, n in enumerate(mi)) for mi in mis])

    if n_dims:
        grids = np.meshgrid(*[q[0] for q in quad], indexing="ij")
        wgrids = np.meshgrid(*[q[1] for q in quad], indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        weights = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
    else:
        nodes, weights = np.zeros((1, 0)), np.ones(1)

    basis = PceBasis(n_dims, degree, mis, gamma, specs, quad, nodes, weights,
                     np.ones((nodes.shape[0], len(mis))), (np.array([], int),) * 3 + (np.array([]),))
    object.__setattr__(basis, "phi_nodes", basis.evaluate(nodes) if n_dims else np.ones((1, 1)))
    object.__setattr__(basis, "triple_products", _triple_products(specs, mis, degree))
    return basis


def _triple_products(specs, mis, degree):
    """Sparse E[Phi_i Phi_j Phi_k] as COO arrays (i, j, k, value)."""
    n_dims = len(specs)
    nt = (3 * degree) // 2 + 1
    tri1 = []
    for s in specs:
        x, w = gauss_jacobi(s, nt)
        P = np.array([jacobi_1d(s, n, x) for n in range(degree + 1)])
        tri1.append(np.einsum("q,aq,bq,cq->abc", w, P, P, P))
    I, J, K, V = [], [], [], []
    for (i, a), (j, b), (k, c) in itertools.product(enumerate(mis), repeat=3):
        val = math.prod(tri1[d][a[d], b[d], c[d]] for d in range(n_dims)) if n_dims else 1.0
        if abs(val) > TRIPLE_DROP:
            I.append(i)
            J.append(j)
            K.append(k)
            V.append(val)
    return np.array(I, int), np.array(J, int), np.array(K, int), np.array(V)


# ---------------------------------------------------------------------------
# Galerkin stochastic power flow
# ---------------------------------------------------------------------------

class GalerkinSystem:
    """Galerkin-projected power-flow equations in coefficient space.

    Unknowns are the PCE coefficients ``X`` (K+1, n) of the power-flow state;
    controls may themselves be random, given as coefficients ``U`` (K+1, m).
    """

    def __init__(self, system: PowerFlowSystem, basis: PceBasis):
        if basis.n_dims != system.nw:
            raise DimensionError(f"basis has {basis.n_dims} germs but the model has {system.nw} wind farms")
        self.system = system
        self.basis = basis
        self.K1 = basis.size
        self.Phi = basis.phi_nodes
        self.proj = basis.projector()
        self.wind_nodes = basis.nodes * system.wind_pmax

    def control_coeffs(self, ctrl) -> np.ndarray:
        """Deterministic control vector -> coefficient matrix."""
        U = np.zeros((self.K1, self.system.m))
        U[0] = ctrl
        return U

    def at_nodes(self, X) -> np.ndarray:
        return self.Phi @ X

    def residual(self, X, U) -> np.ndarray:
        g = self.system.residual(self.Phi @ X, self.wind_nodes, self.Phi @ U)
        return self.proj @ g

    def jacobian(self, X, U) -> np.ndarray:
        """Flattened d R / d X with row/column ordering ``k*n + i``."""
        Jq = self.system.jacobian(self.Phi @ X, self.wind_nodes, self.Phi @ U)
        big = np.einsum("kq,qj,qil->kijl", self.proj, self.Phi, Jq, optimize=True)
        N = self.K1 * self.system.n
        return big.reshape(N, N)

    def control_jacobian(self, X, U) -> np.ndarray:
        """d R / d U, shape (K+1)*n x (K+1)*m."""
        Jq = self.system.control_jacobian(self.Phi @ X, self.wind_nodes, self.Phi @ U)
        big = np.einsum("kq,qj,qil->kijl", self.proj, self.Phi, Jq, optimize=True)
        return big.reshape(self.K1 * self.system.n, self.K1 * self.system.m)

    def project_quantity(self, q: Quantity, X, U, *, grad: bool = False):
        """PCE coefficients of a derived quantity (and d coeffs / d X flattened)."""
        xs, us = self.Phi @ X, self.Phi @ U
        if not grad:
            return self.proj @ self.system.quantity(q, xs, us)
        val, g = self.system.quantity(q, xs, us, grad=True)
        coef = self.proj @ val
        dcoef = np.einsum("kq,qj,ql->kjl", self.proj, self.Phi, g).reshape(self.K1, -1)
        return coef, dcoef

    def solve(self, U, X0, *, tol=TOL, max_iter=MAX_ITER):
        n = self.system.n
        x, it, norm, ok = newton(lambda z: self.residual(z.reshape(self.K1, n), U).ravel(),
                                 lambda z: self.jacobian(z.reshape(self.K1, n), U),
                                 np.asarray(X0, float).ravel(), tol=tol, max_iter=max_iter)
        return x.reshape(self.K1, n), it, norm, ok


@dataclass(frozen=True, eq=False)
class PceSolution:
    """PCE coefficients of every power-flow state variable."""

    galerkin: GalerkinSystem
    coefficients: np.ndarray     # (K+1, n)
    controls: np.ndarray         # (K+1, m)
    converged: bool
    residual_norm: float
    iterations: int = 0

    @property
    def basis(self) -> PceBasis:
        return self.galerkin.basis

    @property
    def system(self) -> PowerFlowSystem:
        return self.galerkin.system

    def variable_names(self) -> list[str]:
        """State variable names in coefficient-column order."""
        names = _state_names(self.system)
        return sorted(names, key=names.get)

    def coeffs(self, variable: str) -> np.ndarray:
        """Coefficient vector of a state variable or derived limit quantity."""
        names = _state_names(self.system)
        if variable in names:
            return self.coefficients[:, names[variable]].copy()
        for q in self.system.limit_quantities():
            if q.name == variable:
                return self.galerkin.project_quantity(q, self.coefficients, self.controls)
        raise KeyError(f"unknown variable {variable!r}")

    def evaluate(self, variable: str, xi) -> np.ndarray:
        return self.basis.evaluate(xi) @ self.coeffs(variable)


def _state_names(system: PowerFlowSystem) -> dict[str, int]:
    cache = getattr(system, "_state_name_cache", None)
    if cache is not None:
        return cache
    m = system.model
    names = {}
    for i, b in enumerate(m.ac_buses):
        names[f"e:{b.id}"] = int(system.ie[i])
        names[f"f:{b.id}"] = int(system.if_[i])
    for i, g in enumerate(m.generators):
        names[f"pg:{g.id}"] = int(system.ipg[i])
        names[f"qg:{g.id}"] = int(system.iqg[i])
    for i, b in enumerate(m.dc_buses):
        names[f"vdc:{b.id}"] = int(system.iv[i])
    for i, c in enumerate(m.converters):
        names[f"ir:{c.id}"] = int(system.iir[i])
        names[f"ii:{c.id}"] = int(system.iii[i])
    system._state_name_cache = names
    return names


def converter_variables(model: NetworkModel, conv_id: str) -> tuple[str, str]:
    """(power, DC voltage) variable names of a converter."""
    return f"pconv:{conv_id}", f"vdc:{model.converter(conv_id).dc_bus}"


def galerkin_solve(model: NetworkModel, basis: PceBasis, dispatch: Optional[Dispatch] = None, *,
                   control_coeffs: Optional[np.ndarray] = None, x0: Optional[np.ndarray] = None,
                   system: Optional[PowerFlowSystem] = None, tol: float = TOL,
                   max_iter: int = MAX_ITER, raise_on_fail: bool = True) -> PceSolution:
    """Intrusive Galerkin stochastic power flow.

    Controls come from ``dispatch`` (deterministic) or ``control_coeffs``
    (random set-points as (K+1, m) coefficients).  The initial guess is the
    deterministic power flow at the mean wind injection.
    """
    system = system or PowerFlowSystem(model, dispatch.modes if dispatch else None)
    gal = GalerkinSystem(system, basis)
    if control_coeffs is None:
        U = gal.control_coeffs(system.controls(dispatch))
    else:
        U = np.asarray(control_coeffs, float)
        if U.shape != (gal.K1, system.m):
            raise DimensionError(f"control coefficients shape {U.shape}, expected {(gal.K1, system.m)}")
    if x0 is None:
        mean_wind = basis.germ_means * system.wind_pmax
        det = solve_powerflow(model, mean_wind, system=system, ctrl=U[0])
        X0 = np.zeros((gal.K1, system.n))
        X0[0] = det.state.x
    else:
        X0 = np.asarray(x0, float)
        if X0.shape != (gal.K1, system.n):
            raise DimensionError(f"initial coefficients shape {X0.shape}, expected {(gal.K1, system.n)}")
    X, it, norm, ok = gal.solve(U, X0, tol=tol, max_iter=max_iter)
    if not ok and raise_on_fail:
        raise ConvergenceError(f"Galerkin power flow did not converge (residual {norm:.3e})", best=X)
    return PceSolution(gal, X, U, ok, norm, it)


def moments(sol: PceSolution, variable: str) -> tuple[float, float]:
    """Mean and variance from the expansion coefficients."""
    c = sol.coeffs(variable)
    return float(c[0]), float(np.sum(sol.basis.gamma[1:] * c[1:] ** 2))


def coefficient_moments(coeffs, gamma) -> tuple[float, float]:
    c = np.asarray(coeffs, float)
    g = np.asarray(gamma, float)
    return float(c[0]), float(np.sum(g[1:] * c[1:] ** 2))


def sensitivity(sol: PceSolution, variable: str, dim: int) -> float:
    """First-order coefficient times the Jacobi slope at the germ mean.

    This is d variable / d xi_dim of the linear part of the expansion, with
    xi the normalised wind output of farm ``dim``.
    """
    basis = sol.basis
    k = basis.first_order_index(dim)
    spec = basis.beta_specs[dim]
    slope = float(jacobi_1d_deriv(spec, 1, spec.mean))
    return float(sol.coeffs(variable)[k] * slope)


def export_csv(sol: PceSolution, path, variables: Optional[Sequence[str]] = None) -> None:
    """Audit dump: one row per (variable, k)."""
    names = variables or sol.variable_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "k", "multi_index", "coefficient"])
        for v in names:
            c = sol.coeffs(v)
            for k, mi in enumerate(sol.basis.multi_indices):
                w.writerow([v, k, "-".join(map(str, mi)), repr(float(c[k]))])
