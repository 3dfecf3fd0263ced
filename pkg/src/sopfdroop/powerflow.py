"""Deterministic AC/DC power flow in rectangular coordinates.

State layout (see :class:`PowerFlowSystem`)::

    [e (nb) | f (nb) | pg (ng) | qg (ng) | vdc (nd) | ir (nc) | ii (nc)]

``e + jf`` are AC bus voltages, ``ir + j ii`` the AC-side converter currents
drawn from the bus into the converter.  Every residual is a polynomial of
degree <= 2 in the state except the ``b*|I|`` converter-loss term.

All residual/Jacobian routines accept a leading batch dimension so that the
Galerkin projection (quadrature nodes) and Monte-Carlo sweeps evaluate many
states in one call.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import (ConvergenceError, DimensionError, PreconditionError,
                     SingularJacobianError)
from .grid import BusKind, ConverterMode, NetworkModel

log = logging.getLogger(__name__)

TOL = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 6
_CURRENT_FLOOR = 1e-9


@dataclass(frozen=True)
class Dispatch:
    """Set-point overrides on top of the defaults stored in the model.

    Converter entries address ``p_set`` (ConstPQ power or droop P_ref),
    ``v_set`` (DC-slack voltage, droop V_ref, AcVf AC voltage), ``q_set`` and
    the droop gain ``k``.  ``modes`` switches converter control modes.
    """

    gen_p: Mapping[str, float] = field(default_factory=dict)
    gen_v: Mapping[str, float] = field(default_factory=dict)
    conv_p: Mapping[str, float] = field(default_factory=dict)
    conv_v: Mapping[str, float] = field(default_factory=dict)
    conv_q: Mapping[str, float] = field(default_factory=dict)
    conv_k: Mapping[str, float] = field(default_factory=dict)
    modes: Mapping[str, ConverterMode] = field(default_factory=dict)


@dataclass(frozen=True)
class Quantity:
    """Scalar function of the state used for limits and reporting."""

    name: str
    kind: str
    index: int
    lower: float
    upper: float


class PowerFlowSystem:
    """Compiled index structure and residual equations for one network."""

    def __init__(self, model: NetworkModel, modes: Optional[Mapping[str, ConverterMode]] = None):
        self.model = model
        modes = dict(modes or {})
        unknown = set(modes) - {c.id for c in model.converters}
        if unknown:
            raise KeyError(f"unknown converter(s) in mode override: {sorted(unknown)}")
        self.modes = tuple(modes.get(c.id, c.mode) for c in model.converters)

        nb, ng, nd, nc = (len(model.ac_buses), len(model.generators),
                          len(model.dc_buses), len(model.converters))
        self.nb, self.ng, self.nd, self.nc, self.nw = nb, ng, nd, nc, len(model.wind_farms)
        off = np.cumsum([0, nb, nb, ng, ng, nd, nc, nc])
        self.n = int(off[-1])
        self.ie, self.if_, self.ipg, self.iqg, self.iv, self.iir, self.iii = (
            np.arange(off[i], off[i + 1]) for i in range(7))
        # row blocks mirror the column blocks
        self.rP, self.rQ, self.rG1, self.rG2, self.rD, self.rC1, self.rC2 = (
            self.ie, self.if_, self.ipg, self.iqg, self.iv, self.iir, self.iii)

        aci, dci = model.ac_index, model.dc_index
        Y = np.zeros((nb, nb), complex)
        for br in model.ac_branches:
            i, j = aci[br.from_bus], aci[br.to_bus]
            ys = 1.0 / complex(br.r, br.x)
            Y[i, i] += ys + 0.5j * br.b
            Y[j, j] += ys + 0.5j * br.b
            Y[i, j] -= ys
            Y[j, i] -= ys
        self.Y = Y
        self.G, self.B = Y.real.copy(), Y.imag.copy()

        Gdc = np.zeros((nd, nd))
        for br in model.dc_branches:
            i, j = dci[br.from_bus], dci[br.to_bus]
            g = 1.0 / br.r
            Gdc[i, i] += g
            Gdc[j, j] += g
            Gdc[i, j] -= g
            Gdc[j, i] -= g
        self.Gdc = Gdc

        self.pd = np.array([b.pd for b in model.ac_buses])
        self.qd = np.array([b.qd for b in model.ac_buses])
        self.gen_bus = np.array([aci[g.bus] for g in model.generators], int)
        self.Cg = np.zeros((nb, ng))
        self.Cg[self.gen_bus, np.arange(ng)] = 1.0
        slack_buses = {b.id for b in model.ac_buses if b.kind is BusKind.SLACK}
        self.gen_is_slack = np.array([g.bus in slack_buses for g in model.generators])

        self.conv_ids = [c.id for c in model.converters]
        self.onshore = np.array([m is not ConverterMode.AC_VF for m in self.modes])
        self.conv_bus = np.array([aci[c.ac_bus] if on else 0
                                  for c, on in zip(model.converters, self.onshore)], int)
        self.conv_dc = np.array([dci[c.dc_bus] for c in model.converters], int)
        self.Cc = np.zeros((nb, nc))
        self.Cc[self.conv_bus[self.onshore], np.flatnonzero(self.onshore)] = 1.0
        self.Cd = np.zeros((nd, nc))
        self.Cd[self.conv_dc, np.arange(nc)] = 1.0
        self.loss = np.array([[c.loss_a, c.loss_b, c.loss_c] for c in model.converters]).reshape(nc, 3)
        self.mode_mask = {m: np.array([mm is m for mm in self.modes]) for m in ConverterMode}

        conv_pos = {c.id: i for i, c in enumerate(model.converters)}
        self.Cw = np.zeros((nc, self.nw))
        for k, w in enumerate(model.wind_farms):
            self.Cw[conv_pos[w.converter], k] = 1.0
        self.wind_pmax = np.array([w.p_max for w in model.wind_farms])

        # control vector: [gen p | gen v | conv p | conv v | conv q | conv k]
        coff = np.cumsum([0, ng, ng, nc, nc, nc, nc])
        self.m = int(coff[-1])
        self.cgp, self.cgv, self.ccp, self.ccv, self.ccq, self.cck = (
            np.arange(coff[i], coff[i + 1]) for i in range(6))
        self._gen_pos = {g.id: i for i, g in enumerate(model.generators)}
        self._conv_pos = conv_pos

    # ------------------------------------------------------------------ setup

    def controls(self, dispatch: Optional[Dispatch] = None) -> np.ndarray:
        """Control vector from model defaults plus ``dispatch`` overrides."""
        d = dispatch or Dispatch()
        u = np.zeros(self.m)
        for i, g in enumerate(self.model.generators):
            u[self.cgp[i]] = g.p_set
            u[self.cgv[i]] = g.v_set
        for i, c in enumerate(self.model.converters):
            p, v, k = c.p_set, c.v_set, 0.0
            if c.droop is not None:
                p, v, k = c.droop.p_ref, c.droop.v_ref, c.droop.k
            u[self.ccp[i]], u[self.ccv[i]], u[self.ccq[i]], u[self.cck[i]] = p, v, c.q_set, k
        for table, block, pos in ((d.gen_p, self.cgp, self._gen_pos), (d.gen_v, self.cgv, self._gen_pos),
                                  (d.conv_p, self.ccp, self._conv_pos), (d.conv_v, self.ccv, self._conv_pos),
                                  (d.conv_q, self.ccq, self._conv_pos), (d.conv_k, self.cck, self._conv_pos)):
            for key, val in table.items():
                u[block[pos[key]]] = val
        return u

    def flat_start(self, ctrl: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.ie] = 1.0
        x[self.iv] = 1.0
        if ctrl is not None:
            for i in range(self.ng):
                x[self.ie[self.gen_bus[i]]] = ctrl[self.cgv[i]]
            for i in range(self.nc):
                if self.modes[i] is ConverterMode.DC_SLACK:
                    x[self.iv[self.conv_dc[i]]] = ctrl[self.ccv[i]]
        return x

    def gen_index(self, gen_id: str) -> int:
        return self._gen_pos[gen_id]

    def conv_index(self, conv_id: str) -> int:
        return self._conv_pos[conv_id]

    # -------------------------------------------------------------- equations

    def _unpack(self, x, wind, ctrl):
        x = np.asarray(x, float)
        if x.shape[-1] != self.n:
            raise DimensionError(f"state has length {x.shape[-1]}, model needs {self.n}")
        batch = x.shape[:-1]
        X = x.reshape(-1, self.n)
        S = X.shape[0]
        W = np.broadcast_to(np.asarray(wind, float).reshape(-1, self.nw) if self.nw else
                            np.zeros((1, 0)), (S, self.nw))
        C = np.asarray(ctrl, float)
        if C.shape[-1] != self.m:
            raise DimensionError(f"control vector has length {C.shape[-1]}, expected {self.m}")
        C = np.broadcast_to(C.reshape(-1, self.m), (S, self.m))
        return batch, X, W, C

    def _conv_terminal(self, X, C):
        e, f = X[:, self.ie], X[:, self.if_]
        ec = np.where(self.onshore, e[:, self.conv_bus], C[:, self.ccv])
        fc = np.where(self.onshore, f[:, self.conv_bus], 0.0)
        return ec, fc

    def _parts(self, X, C):
        e, f = X[:, self.ie], X[:, self.if_]
        ir, ii = X[:, self.iir], X[:, self.iii]
        a = e @ self.G.T - f @ self.B.T
        c = e @ self.B.T + f @ self.G.T
        ec, fc = self._conv_terminal(X, C)
        pac = ec * ir + fc * ii
        qac = fc * ir - ec * ii
        mag = np.sqrt(ir * ir + ii * ii + _CURRENT_FLOOR ** 2)
        la, lb, lc = self.loss.T
        loss = la + lb * mag + lc * mag * mag
        return e, f, ir, ii, a, c, ec, fc, pac, qac, mag, loss

    def residual(self, x, wind, ctrl) -> np.ndarray:
        """Power-flow mismatch g(x) for state(s) ``x``."""
        batch, X, W, C = self._unpack(x, wind, ctrl)
        e, f, ir, ii, a, c, ec, fc, pac, qac, mag, loss = self._parts(X, C)
        pg, qg, v = X[:, self.ipg], X[:, self.iqg], X[:, self.iv]
        R = np.empty_like(X)
        on = self.onshore
        R[:, self.rP] = e * a + f * c - pg @ self.Cg.T + self.pd + (pac * on) @ self.Cc.T
        R[:, self.rQ] = f * a - e * c - qg @ self.Cg.T + self.qd + (qac * on) @ self.Cc.T

        eg, fg = e[:, self.gen_bus], f[:, self.gen_bus]
        gp, gv = C[:, self.cgp], C[:, self.cgv]
        sl = self.gen_is_slack
        R[:, self.rG1] = np.where(sl, eg - gv, pg - gp)
        R[:, self.rG2] = np.where(sl, fg, eg * eg + fg * fg - gv * gv)

        pdc = pac - loss
        R[:, self.rD] = pdc @ self.Cd.T - v * (v @ self.Gdc.T)

        vc = v[:, self.conv_dc]
        cp, cv, cq, ck = C[:, self.ccp], C[:, self.ccv], C[:, self.ccq], C[:, self.cck]
        mm = self.mode_mask
        r1 = np.zeros_like(pac)
        r1 = np.where(mm[ConverterMode.DC_SLACK], vc - cv, r1)
        r1 = np.where(mm[ConverterMode.CONST_PQ], pac - cp, r1)
        r1 = np.where(mm[ConverterMode.VOLTAGE_DROOP], pac - cp + ck * (vc - cv), r1)
        r1 = np.where(mm[ConverterMode.AC_VF], pac - W @ self.Cw.T, r1)
        R[:, self.rC1] = r1
        R[:, self.rC2] = qac - cq
        return R.reshape(batch + (self.n,))

    def jacobian(self, x, wind, ctrl) -> np.ndarray:
        """Analytic dg/dx, shape ``batch + (n, n)``."""
        batch, X, W, C = self._unpack(x, wind, ctrl)
        S, n = X.shape
        e, f, ir, ii, a, c, ec, fc, pac, qac, mag, loss = self._parts(X, C)
        v = X[:, self.iv]
        J = np.zeros((S, n, n))
        G, B = self.G, self.B
        ie, if_ = self.ie, self.if_
        rP, rQ = self.rP, self.rQ
        ar = np.arange(self.nb)

        J[:, rP[:, None], ie[None, :]] = e[:, :, None] * G + f[:, :, None] * B
        J[:, rP[:, None], if_[None, :]] = -e[:, :, None] * B + f[:, :, None] * G
        J[:, rQ[:, None], ie[None, :]] = f[:, :, None] * G - e[:, :, None] * B
        J[:, rQ[:, None], if_[None, :]] = -f[:, :, None] * B - e[:, :, None] * G
        J[:, rP[ar], ie[ar]] += a
        J[:, rP[ar], if_[ar]] += c
        J[:, rQ[ar], ie[ar]] -= c
        J[:, rQ[ar], if_[ar]] += a

        for g in range(self.ng):
            b = self.gen_bus[g]
            J[:, rP[b], self.ipg[g]] = -1.0
            J[:, rQ[b], self.iqg[g]] = -1.0
            if self.gen_is_slack[g]:
                J[:, self.rG1[g], ie[b]] = 1.0
                J[:, self.rG2[g], if_[b]] = 1.0
            else:
                J[:, self.rG1[g], self.ipg[g]] = 1.0
                J[:, self.rG2[g], ie[b]] = 2.0 * e[:, b]
                J[:, self.rG2[g], if_[b]] = 2.0 * f[:, b]

        Gdc = self.Gdc
        J[:, self.rD[:, None], self.iv[None, :]] = -v[:, :, None] * Gdc
        J[:, self.rD, self.iv] -= v @ Gdc.T

        la, lb, lc = self.loss.T
        dloss = lb / mag + 2.0 * lc
        for k in range(self.nc):
            jr, ji = self.iir[k], self.iii[k]
            # d pac, d qac w.r.t. (ir, ii) and (e_b, f_b)
            dp_ir, dp_ii = ec[:, k], fc[:, k]
            dq_ir, dq_ii = fc[:, k], -ec[:, k]
            rows_p = [self.rD[self.conv_dc[k]]]
            mode = self.modes[k]
            if mode in (ConverterMode.CONST_PQ, ConverterMode.VOLTAGE_DROOP, ConverterMode.AC_VF):
                rows_p.append(self.rC1[k])
            if self.onshore[k]:
                b = self.conv_bus[k]
                J[:, rP[b], jr] += dp_ir
                J[:, rP[b], ji] += dp_ii
                J[:, rP[b], ie[b]] += ir[:, k]
                J[:, rP[b], if_[b]] += ii[:, k]
                J[:, rQ[b], jr] += dq_ir
                J[:, rQ[b], ji] += dq_ii
                J[:, rQ[b], ie[b]] -= ii[:, k]
                J[:, rQ[b], if_[b]] += ir[:, k]
                for row in rows_p:
                    J[:, row, ie[b]] += ir[:, k]
                    J[:, row, if_[b]] += ii[:, k]
                J[:, self.rC2[k], ie[b]] += -ii[:, k]
                J[:, self.rC2[k], if_[b]] += ir[:, k]
            for row in rows_p:
                J[:, row, jr] += dp_ir
                J[:, row, ji] += dp_ii
            # converter loss only enters the DC balance
            rd = self.rD[self.conv_dc[k]]
            J[:, rd, jr] -= dloss[:, k] * ir[:, k]
            J[:, rd, ji] -= dloss[:, k] * ii[:, k]
            J[:, self.rC2[k], jr] += dq_ir
            J[:, self.rC2[k], ji] += dq_ii
            vcol = self.iv[self.conv_dc[k]]
            if mode is ConverterMode.DC_SLACK:
                J[:, self.rC1[k], vcol] += 1.0
            elif mode is ConverterMode.VOLTAGE_DROOP:
                J[:, self.rC1[k], vcol] += C[:, self.cck[k]]
        return J.reshape(batch + (n, n))

    def control_jacobian(self, x, wind, ctrl) -> np.ndarray:
        """dg/du for the control vector, shape ``batch + (n, m)``."""
        batch, X, W, C = self._unpack(x, wind, ctrl)
        S = X.shape[0]
        Ju = np.zeros((S, self.n, self.m))
        e, f = X[:, self.ie], X[:, self.if_]
        for g in range(self.ng):
            if self.gen_is_slack[g]:
                Ju[:, self.rG1[g], self.cgv[g]] = -1.0
            else:
                Ju[:, self.rG1[g], self.cgp[g]] = -1.0
                Ju[:, self.rG2[g], self.cgv[g]] = -2.0 * C[:, self.cgv[g]]
        v = X[:, self.iv]
        for k in range(self.nc):
            mode = self.modes[k]
            Ju[:, self.rC2[k], self.ccq[k]] = -1.0
            if mode is ConverterMode.DC_SLACK:
                Ju[:, self.rC1[k], self.ccv[k]] = -1.0
            elif mode is ConverterMode.CONST_PQ:
                Ju[:, self.rC1[k], self.ccp[k]] = -1.0
            elif mode is ConverterMode.VOLTAGE_DROOP:
                Ju[:, self.rC1[k], self.ccp[k]] = -1.0
                Ju[:, self.rC1[k], self.ccv[k]] = -C[:, self.cck[k]]
                Ju[:, self.rC1[k], self.cck[k]] = v[:, self.conv_dc[k]] - C[:, self.ccv[k]]
            else:
                ir, ii = X[:, self.iir[k]], X[:, self.iii[k]]
                Ju[:, self.rC1[k], self.ccv[k]] = ir
                Ju[:, self.rD[self.conv_dc[k]], self.ccv[k]] += ir
                Ju[:, self.rC2[k], self.ccv[k]] = -ii
        return Ju.reshape(batch + (self.n, self.m))

    def wind_jacobian(self) -> np.ndarray:
        """dg/dw (constant), shape ``(n, nw)``."""
        Jw = np.zeros((self.n, self.nw))
        Jw[self.rC1] = -self.Cw
        return Jw

    # ----------------------------------------------------------- quantities

    def limit_quantities(self) -> list[Quantity]:
        """Operational quantities carrying limits (chance-constrained in the SOPF)."""
        model = self.model
        out = []
        vlim = {}
        for c in model.converters:
            lo, hi = vlim.get(c.dc_bus, (-np.inf, np.inf))
            vlim[c.dc_bus] = (max(lo, c.v_min), min(hi, c.v_max))
        for i, b in enumerate(model.dc_buses):
            lo, hi = vlim.get(b.id, (0.9, 1.1))
            out.append(Quantity(f"vdc:{b.id}", "vdc", i, lo, hi))
        for i, g in enumerate(model.generators):
            out.append(Quantity(f"pg:{g.id}", "pg", i, g.p_min, g.p_max))
        for i, c in enumerate(model.converters):
            out.append(Quantity(f"pconv:{c.id}", "pconv", i, -c.p_rating, c.p_rating))
        for i, br in enumerate(model.dc_branches):
            out.append(Quantity(f"idc:{br.id}", "idc", i, -br.rating, br.rating))
        for i, br in enumerate(model.ac_branches):
            out.append(Quantity(f"iac:{br.id}", "iac", i, -np.inf, br.rating))
        return out

    def quantity(self, q: Quantity, x, ctrl=None, *, grad: bool = False):
        """Value (and optionally gradient w.r.t. the state) of ``q``."""
        x = np.asarray(x, float)
        batch = x.shape[:-1]
        X = x.reshape(-1, self.n)
        S = X.shape[0]
        C = np.broadcast_to(np.asarray(self.controls() if ctrl is None else ctrl, float).reshape(-1, self.m),
                            (S, self.m))
        g = np.zeros((S, self.n)) if grad else None
        if q.kind == "vdc":
            col = self.iv[q.index]
            val = X[:, col]
            if grad:
                g[:, col] = 1.0
        elif q.kind == "pg":
            col = self.ipg[q.index]
            val = X[:, col]
            if grad:
                g[:, col] = 1.0
        elif q.kind == "pconv":
            k = q.index
            ec, fc = self._conv_terminal(X, C)
            ir, ii = X[:, self.iir[k]], X[:, self.iii[k]]
            val = ec[:, k] * ir + fc[:, k] * ii
            if grad:
                g[:, self.iir[k]] = ec[:, k]
                g[:, self.iii[k]] = fc[:, k]
                if self.onshore[k]:
                    b = self.conv_bus[k]
                    g[:, self.ie[b]] = ir
                    g[:, self.if_[b]] = ii
        elif q.kind == "idc":
            br = self.model.dc_branches[q.index]
            i, j = self.model.dc_index[br.from_bus], self.model.dc_index[br.to_bus]
            val = (X[:, self.iv[i]] - X[:, self.iv[j]]) / br.r
            if grad:
                g[:, self.iv[i]] = 1.0 / br.r
                g[:, self.iv[j]] = -1.0 / br.r
        elif q.kind == "iac":
            br = self.model.ac_branches[q.index]
            i, j = self.model.ac_index[br.from_bus], self.model.ac_index[br.to_bus]
            ys = 1.0 / complex(br.r, br.x)
            yf = ys + 0.5j * br.b
            # I_from = yf*V_i - ys*V_j
            ei, fi, ej, fj = X[:, self.ie[i]], X[:, self.if_[i]], X[:, self.ie[j]], X[:, self.if_[j]]
            re = yf.real * ei - yf.imag * fi - (ys.real * ej - ys.imag * fj)
            im = yf.imag * ei + yf.real * fi - (ys.imag * ej + ys.real * fj)
            val = np.sqrt(re * re + im * im + _CURRENT_FLOOR ** 2)
            if grad:
                g[:, self.ie[i]] = (re * yf.real + im * yf.imag) / val
                g[:, self.if_[i]] = (-re * yf.imag + im * yf.real) / val
                g[:, self.ie[j]] = (-re * ys.real - im * ys.imag) / val
                g[:, self.if_[j]] = (re * ys.imag - im * ys.real) / val
        else:
            raise KeyError(q.kind)
        val = val.reshape(batch)
        if grad:
            return val, g.reshape(batch + (self.n,))
        return val

    def conv_power(self, x, ctrl, conv_id: str):
        k = self.conv_index(conv_id)
        return self.quantity(Quantity("", "pconv", k, 0, 0), x, ctrl)

    def dc_voltage(self, x, conv_id: str):
        k = self.conv_index(conv_id)
        return np.asarray(x)[..., self.iv[self.conv_dc[k]]]

    # ------------------------------------------------------------- accounting

    def balance(self, x, wind, ctrl) -> dict:
        """Independent active-power bookkeeping of a (single) solved state."""
        x = np.asarray(x, float)
        e, f = x[self.ie], x[self.if_]
        V = e + 1j * f
        ac_loss = 0.0
        for br in self.model.ac_branches:
            i, j = self.model.ac_index[br.from_bus], self.model.ac_index[br.to_bus]
            ys = 1.0 / complex(br.r, br.x)
            i_f = ys * (V[i] - V[j]) + 0.5j * br.b * V[i]
            i_t = ys * (V[j] - V[i]) + 0.5j * br.b * V[j]
            ac_loss += (V[i] * np.conj(i_f) + V[j] * np.conj(i_t)).real
        vd = x[self.iv]
        dc_loss = sum((vd[self.model.dc_index[br.from_bus]] - vd[self.model.dc_index[br.to_bus]]) ** 2 / br.r
                      for br in self.model.dc_branches)
        ir, ii = x[self.iir], x[self.iii]
        mag = np.sqrt(ir * ir + ii * ii + _CURRENT_FLOOR ** 2)
        conv_loss = float(np.sum(self.loss[:, 0] + self.loss[:, 1] * mag + self.loss[:, 2] * mag * mag))
        gen = float(np.sum(x[self.ipg]))
        w = float(np.sum(wind)) if self.nw else 0.0
        load = float(np.sum(self.pd))
        return {"generation": gen, "wind": w, "load": load, "ac_loss": float(ac_loss),
                "dc_loss": float(dc_loss), "converter_loss": conv_loss,
                "mismatch": gen + w - load - ac_loss - dc_loss - conv_loss}


@dataclass(frozen=True)
class SystemState:
    """Solved (or trial) state vector bound to its compiled system."""

    system: PowerFlowSystem
    x: np.ndarray
    ctrl: np.ndarray

    @property
    def ac_voltages(self) -> np.ndarray:
        return self.x[self.system.ie] + 1j * self.x[self.system.if_]

    @property
    def dc_voltages(self) -> np.ndarray:
        return self.x[self.system.iv]

    @property
    def gen_p(self) -> np.ndarray:
        return self.x[self.system.ipg]

    @property
    def gen_q(self) -> np.ndarray:
        return self.x[self.system.iqg]

    @property
    def conv_currents(self) -> np.ndarray:
        return self.x[self.system.iir] + 1j * self.x[self.system.iii]

    def conv_p(self, conv_id: str) -> float:
        return float(self.system.conv_power(self.x, self.ctrl, conv_id))

    def conv_vdc(self, conv_id: str) -> float:
        return float(self.system.dc_voltage(self.x, conv_id))


@dataclass(frozen=True)
class PowerFlowSolution:
    state: SystemState
    iterations: int
    residual_norm: float
    converged: bool
    wind: np.ndarray


def newton(fun, jac, x0, *, tol=TOL, max_iter=MAX_ITER, max_halvings=MAX_HALVINGS):
    """Damped Newton on ``fun(x) = 0``; returns (x, iterations, residual_norm, converged)."""
    x = np.array(x0, float)
    r = fun(x)
    norm = float(np.max(np.abs(r))) if r.size else 0.0
    it = 0
    while norm > tol and it < max_iter:
        J = jac(x)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}", best=x) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(f"non-finite Newton step at iteration {it}", best=x)
        step = 1.0
        for _ in range(max_halvings + 1):
            x_new = x + step * dx
            r_new = fun(x_new)
            n_new = float(np.max(np.abs(r_new)))
            if n_new < norm or not np.isfinite(norm):
                break
            step *= 0.5
        x, r, norm = x_new, r_new, n_new
        it += 1
    return x, it, norm, norm <= tol


def _check_wind(system: PowerFlowSystem, wind) -> np.ndarray:
    w = np.asarray(wind if wind is not None else np.zeros(system.nw), float)
    if w.shape[-1] != system.nw:
        raise DimensionError(f"{w.shape[-1]} wind injections for {system.nw} wind farms")
    if np.any(w < -1e-12) or np.any(w > system.wind_pmax + 1e-12):
        raise PreconditionError("wind injection outside [0, p_max]")
    return w


def solve_powerflow(model: NetworkModel, wind=None, dispatch: Optional[Dispatch] = None, *,
                    x0=None, tol: float = TOL, max_iter: int = MAX_ITER,
                    system: Optional[PowerFlowSystem] = None, ctrl=None,
                    raise_on_fail: bool = False) -> PowerFlowSolution:
    """Newton power flow for one wind injection vector (p.u. per farm).

    Non-convergence returns the best iterate with ``converged=False`` unless
    ``raise_on_fail``; a singular Jacobian always raises
    :class:`SingularJacobianError`.
    """
    system = system or PowerFlowSystem(model, (dispatch.modes if dispatch else None))
    w = _check_wind(system, wind)
    u = system.controls(dispatch) if ctrl is None else np.asarray(ctrl, float)
    start = system.flat_start(u) if x0 is None else np.asarray(x0, float)
    if start.shape != (system.n,):
        raise DimensionError(f"initial state has shape {start.shape}, expected ({system.n},)")
    x, it, norm, ok = newton(lambda z: system.residual(z, w, u), lambda z: system.jacobian(z, w, u),
                             start, tol=tol, max_iter=max_iter)
    if not ok:
        log.warning("power flow did not converge: residual %.3e after %d iterations", norm, it)
        if raise_on_fail:
            raise ConvergenceError(f"power flow did not converge (residual {norm:.3e})", best=x)
    return PowerFlowSolution(SystemState(system, x, u), it, norm, ok, w)


def solve_batch(system: PowerFlowSystem, wind, ctrl, x0, *, tol: float = TOL,
                max_iter: int = MAX_ITER, chunk: int = 1024):
    """Vectorised Newton over many independent injections.

    ``wind`` is ``(S, nw)``, ``ctrl`` broadcastable to ``(S, m)``, ``x0``
    broadcastable to ``(S, n)``.  Returns ``(states, converged_mask)``.
    """
    wind = np.atleast_2d(np.asarray(wind, float))
    S = wind.shape[0]
    ctrl = np.broadcast_to(np.asarray(ctrl, float), (S, system.m))
    X = np.array(np.broadcast_to(np.asarray(x0, float), (S, system.n)))
    ok = np.zeros(S, bool)
    for lo in range(0, S, chunk):
        sl = slice(lo, min(S, lo + chunk))
        x, w, u = X[sl], wind[sl], ctrl[sl]
        r = system.residual(x, w, u)
        norm = np.max(np.abs(r), axis=1)
        for _ in range(max_iter):
            act = norm > tol
            if not act.any():
                break
            J = system.jacobian(x[act], w[act], u[act])
            dx = np.linalg.solve(J, -r[act][..., None])[..., 0]
            step = np.ones(act.sum())
            xa = x[act]
            base_norm = norm[act]
            for _h in range(MAX_HALVINGS + 1):
                xt = xa + step[:, None] * dx
                rt = system.residual(xt, w[act], u[act])
                nt = np.max(np.abs(rt), axis=1)
                worse = nt >= base_norm
                if not worse.any():
                    break
                step = np.where(worse, 0.5 * step, step)
            x[act], r[act], norm[act] = xt, rt, nt
        X[sl] = x
        ok[sl] = norm <= tol
    return X, ok


def dump_solution_csv(sol: PowerFlowSolution, path) -> None:
    """Debug dump: one row per AC bus, DC bus and converter."""
    sys_, st = sol.state.system, sol.state
    model = sys_.model
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "id", "v_re", "v_im", "v_dc", "p", "q"])
        V = st.ac_voltages
        for i, b in enumerate(model.ac_buses):
            w.writerow(["ac_bus", b.id, V[i].real, V[i].imag, "", "", ""])
        for i, b in enumerate(model.dc_buses):
            w.writerow(["dc_bus", b.id, "", "", st.dc_voltages[i], "", ""])
        for i, g in enumerate(model.generators):
            w.writerow(["generator", g.id, "", "", "", st.gen_p[i], st.gen_q[i]])
        for c in model.converters:
            k = sys_.conv_index(c.id)
            ec, fc = sys_._conv_terminal(st.x[None, :], st.ctrl[None, :])
            cur = st.conv_currents[k]
            q = fc[0, k] * cur.real - ec[0, k] * cur.imag
            w.writerow(["converter", c.id, "", "", st.conv_vdc(c.id), st.conv_p(c.id), q])
