"""DLMP extraction, decomposition and voltage-unbalance sensitivities.

Nodal prices are the multipliers of the nodal balance constraints.  They
are split here into named components: the energy price at the reference
(substation) bus, a congestion term from binding thermal limits, a
voltage-limit term from binding magnitude bounds, an unbalance term from
the VUF constraint multiplier (hard mode) or penalty weight (soft mode),
and losses as the remainder of the balance dual after the named terms are
taken out.  Component attribution uses network response sensitivities from
the power-flow Jacobian at the solved point with generation held fixed
(the slack absorbs the perturbation); this convention is stated in every
report header the CLI writes.

Prices are EUR/kWh; duals arrive in EUR/h per per-unit and are divided by
the kW base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import NPHASE, PHASES, NetworkSpec
from .opf import OpfProblem
from .powerflow import OperatingPoint, build_ybus, perturb_and_resolve, solve_pf
from .sequence import PhasorSet, grad_f

EPS_I = 1e-8            # incident-current magnitude below which the
                        # closed-form sensitivity is reported as undefined
FD_STEP = 1e-5          # central-difference perturbation, per-unit

COMPONENTS = ("energy", "loss", "congestion", "voltage_limit", "unbalance")


@dataclass(frozen=True)
class DlmpBreakdown:
    bus: str
    phase: str
    power_kind: str         # "active" | "reactive"
    total: float            # EUR/kWh (EUR/kvarh for reactive)
    energy: float
    loss: float
    congestion: float
    voltage_limit: float
    unbalance: float

    @property
    def residual(self):
        return self.total - (self.energy + self.loss + self.congestion
                             + self.voltage_limit + self.unbalance)


@dataclass(frozen=True)
class SensitivityReport:
    """Closed-form vs perturb-and-resolve unbalance sensitivity at one point."""
    bus: str
    phase: str
    power_kind: str
    closed_form: float | None       # squared-percent per per-unit power
    finite_difference: float | None
    rel_gap: float | None
    incident_current: float = 0.0   # magnitude used in the denominator

    @property
    def defined(self):
        return self.closed_form is not None


class DecompositionError(Exception):
    pass


# -- closed-form sensitivity ------------------------------------------------


def sensitivity_closed_form(point: OperatingPoint, bus, phase, power_kind="active",
                            response=None):
    """One closed-form sensitivity entry df/dP (or df/dQ) at (bus, phase).

    The metric gradient at the bus is chained with the bus's own block of
    the inverted power-flow Jacobian (generation fixed, slack swinging), so
    the value is the exact first-order response of the local metric.  The
    entry is reported as undefined when the bus draws essentially no
    current on that phase: with nothing flowing, a power perturbation has
    no well-conditioned voltage direction to act through.

    ``response`` may carry a precomputed :func:`_response_matrix` result to
    amortize the inverse across a whole report.
    """
    net = point.net
    phase_idx = PHASES.index(phase) if isinstance(phase, str) else int(phase)
    imag = abs(point.incident_current_sum(bus, phase_idx))
    if imag <= EPS_I:
        return SensitivityReport(
            bus=bus, phase=PHASES[phase_idx], power_kind=power_kind,
            closed_form=None, finite_difference=None, rel_gap=None,
            incident_current=imag,
        )
    if response is None:
        response = _response_matrix(net, point.voltages)
    cols_p, cols_q, idx = response
    pos_of = {k: t for t, k in enumerate(idx)}
    b = net.bus_index(bus)
    t = pos_of[3 * b + phase_idx]
    col = (cols_p if power_kind == "active" else cols_q)[:, t]
    dv_bus = np.array([col[pos_of[3 * b + ph]] for ph in range(NPHASE)])
    grad = grad_f(point.phasors(bus)).as_array()
    value = float(np.sum(np.real(np.conj(grad) * dv_bus)))
    return SensitivityReport(
        bus=bus, phase=PHASES[phase_idx], power_kind=power_kind,
        closed_form=value, finite_difference=None, rel_gap=None,
        incident_current=imag,
    )


def _injections_from_point(point: OperatingPoint):
    net = point.net
    ybus = build_ybus(net)
    vflat = point.voltages.reshape(-1)
    s = (vflat * np.conj(ybus @ vflat)).reshape(len(net.buses), NPHASE)
    s[net.bus_index(net.substation_bus)] = 0.0
    return s


def sensitivity_fd(net: NetworkSpec, point: OperatingPoint, bus, phase,
                   power_kind="active", step=FD_STEP):
    """Central finite difference of the unbalance metric via re-solved flows."""
    phase_idx = PHASES.index(phase) if isinstance(phase, str) else int(phase)
    inj = _injections_from_point(point)
    kw = {"dp": step} if power_kind == "active" else {"dq": step}
    _, df_up = perturb_and_resolve(net, inj, bus, phase_idx, base=point, **kw)
    kw = {"dp": -step} if power_kind == "active" else {"dq": -step}
    _, df_dn = perturb_and_resolve(net, inj, bus, phase_idx, base=point, **kw)
    return (df_up - df_dn) / (2.0 * step)


def sensitivity_report(net: NetworkSpec, point: OperatingPoint, buses=None,
                       step=FD_STEP):
    """Closed-form and FD sensitivities for every (bus, phase, power kind).

    The FD column perturbs the consumption and re-solves the network, so
    the relative gap reports the linearization error of the closed form
    instead of hiding it.
    """
    if buses is None:
        buses = [b.id for b in net.buses if b.id != net.substation_bus]
    response = _response_matrix(net, point.voltages)
    out = []
    for bus in buses:
        for phase_idx in range(NPHASE):
            for kind in ("active", "reactive"):
                entry = sensitivity_closed_form(point, bus, phase_idx, kind,
                                                response=response)
                if not entry.defined:
                    out.append(entry)
                    continue
                fd = sensitivity_fd(net, point, bus, phase_idx, kind, step=step)
                denom = max(abs(fd), abs(entry.closed_form), 1e-12)
                out.append(SensitivityReport(
                    bus=bus, phase=PHASES[phase_idx], power_kind=kind,
                    closed_form=entry.closed_form, finite_difference=float(fd),
                    rel_gap=float(abs(entry.closed_form - fd) / denom),
                    incident_current=entry.incident_current,
                ))
    return out


# -- DLMP decomposition -----------------------------------------------------


def _response_matrix(net: NetworkSpec, voltages):
    """Complex voltage response dV to unit consumption increases.

    Returns (columns, index) where ``columns[t]`` is the (nbus, 3) complex
    voltage change per unit of extra active (t even) or reactive (t odd)
    consumption at non-slack entry t // 2, generation held fixed.
    """
    n = len(net.buses)
    slack = net.bus_index(net.substation_bus)
    nonslack = [i for i in range(n) if i != slack]
    idx = np.concatenate([[3 * i, 3 * i + 1, 3 * i + 2] for i in nonslack])
    m = len(idx)
    ybus = build_ybus(net)
    vflat = voltages.reshape(-1)
    i_inj = ybus @ vflat
    ysub = ybus[np.ix_(idx, idx)]
    dS_de = np.diag(np.conj(i_inj[idx])) + np.diag(vflat[idx]) @ np.conj(ysub)
    dS_df = 1j * np.diag(np.conj(i_inj[idx])) - 1j * np.diag(vflat[idx]) @ np.conj(ysub)
    jac = np.block([
        [np.real(dS_de), np.real(dS_df)],
        [np.imag(dS_de), np.imag(dS_df)],
    ])
    inv = np.linalg.inv(jac)
    # extra consumption dP at entry k shifts the specified injection by -1
    cols_p = -(inv[:m, :m] + 1j * inv[m:, :m])      # column k: dV for dP_k = 1
    cols_q = -(inv[:m, m:] + 1j * inv[m:, m:])
    return cols_p, cols_q, idx


def decompose(sol, prob: OpfProblem | None = None, net: NetworkSpec | None = None):
    """Break every nodal price into its named components.

    Components beyond the reference-bus energy price are evaluated with the
    solved point's power-flow Jacobian; losses are the remainder of the
    balance dual after the named terms, so the breakdown sums to the total
    by construction and the residual field tracks float error only.
    """
    prob = prob or sol.problem
    net = net or prob.net
    if not sol.success:
        raise DecompositionError(f"cannot decompose a {sol.status} solve: {sol.message}")
    base_kw = net.base_kw
    v = sol.voltages()
    cols_p, cols_q, idx = _response_matrix(net, v)
    slack = net.bus_index(net.substation_bus)
    n = len(net.buses)

    # multipliers below tolerance are barrier dust on inactive rows; they
    # would contribute far less than the decomposition tolerance, so they are
    # treated as exactly inactive and left to the loss remainder
    active_tol = 1e-7
    binding_thermal = []
    for l, ln in enumerate(net.lines):
        for ph in range(NPHASE):
            eta = sol.eta((ln.from_bus, ln.to_bus), PHASES[ph])
            if abs(eta) > active_tol:
                binding_thermal.append((l, ph, eta))
    binding_sigma = []
    for b in range(n):
        if b == slack:
            continue
        for ph in range(NPHASE):
            lo, hi = sol.sigma(net.buses[b].id, PHASES[ph])
            if abs(hi - lo) > active_tol:
                binding_sigma.append((b, ph, hi - lo))
    unbalance_weights = []
    if prob.cfg.mode == "hard":
        for bid in prob.vuf_buses:
            psi = sol.psi(bid)
            if abs(psi) > active_tol:
                unbalance_weights.append((bid, psi))
    elif prob.cfg.mode == "soft" and prob.cfg.penalty_weight > 0:
        unbalance_weights = [(bid, prob.cfg.penalty_weight) for bid in prob.vuf_buses]
    grad_cache = {
        bid: grad_f(PhasorSet.from_array(v[net.bus_index(bid)])).as_array()
        for bid, _ in unbalance_weights
    }

    pos_of = {k: t for t, k in enumerate(idx)}   # flat voltage index -> column row

    def dv_for(col):
        out = np.zeros((n, NPHASE), dtype=complex)
        flat = out.reshape(-1)
        flat[idx] = col
        return out

    def components(col_kind, t):
        col = col_kind[:, t]
        dv = dv_for(col)
        congestion = 0.0
        for l, ph, eta in binding_thermal:
            ln = net.lines[l]
            bi = net.bus_index(ln.from_bus)
            bj = net.bus_index(ln.to_bus)
            i_line = ln.y @ (v[bi] - v[bj])
            di = ln.y @ (dv[bi] - dv[bj])
            ds = dv[bi, ph] * np.conj(i_line[ph]) + v[bi, ph] * np.conj(di[ph])
            p = np.real(v[bi, ph] * np.conj(i_line[ph]))
            q = np.imag(v[bi, ph] * np.conj(i_line[ph]))
            congestion += 2.0 * eta * (p * np.real(ds) + q * np.imag(ds))
        voltage_limit = 0.0
        for b, ph, w in binding_sigma:
            voltage_limit += w * 2.0 * np.real(np.conj(v[b, ph]) * dv[b, ph])
        unbalance = 0.0
        for bid, w in unbalance_weights:
            b = net.bus_index(bid)
            g = grad_cache[bid]
            dfd = float(np.sum(np.real(np.conj(g) * dv[b])))
            unbalance += w * dfd
        return congestion / base_kw, voltage_limit / base_kw, unbalance / base_kw

    out = []
    for kind, cols, phi in (
        ("active", cols_p, sol.phi_p),
        ("reactive", cols_q, sol.phi_q),
    ):
        energy = {ph: phi(net.substation_bus, PHASES[ph]) / base_kw
                  for ph in range(NPHASE)}
        for b in range(n):
            bid = net.buses[b].id
            for ph in range(NPHASE):
                total = phi(bid, PHASES[ph]) / base_kw
                if b == slack:
                    out.append(DlmpBreakdown(
                        bus=bid, phase=PHASES[ph], power_kind=kind,
                        total=total, energy=total, loss=0.0, congestion=0.0,
                        voltage_limit=0.0, unbalance=0.0))
                    continue
                t = pos_of[3 * b + ph]
                cong, vlim, unb = components(cols, t)
                loss = total - energy[ph] - cong - vlim - unb
                out.append(DlmpBreakdown(
                    bus=bid, phase=PHASES[ph], power_kind=kind,
                    total=total, energy=energy[ph], loss=loss,
                    congestion=cong, voltage_limit=vlim, unbalance=unb))
    return out
