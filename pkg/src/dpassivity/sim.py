"""Nonlinear time-domain simulation of devices coupled through the power flow."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .devices import (E_QP_FLOOR, STATE_DIM, DomainError, device_rhs,
                      storage_weights, symmetric_part)
from .network import (AdmittanceMatrix, OperatingPoint, build_admittance,
                      kron_reduce, power_injections)
from .criteria import assemble_sdev

__all__ = [
    "StatePerturbation", "GroundFault", "Scenario", "Trajectory",
    "SimulationError", "apply_fault", "simulate", "lyapunov_surrogate_trace",
    "default_surrogate_weights", "write_trajectory_csv", "format_number",
]

RTOL = 1e-7
ATOL = 1e-9
DEFAULT_FAULT_DURATION = 0.1


class SimulationError(RuntimeError):
    def __init__(self, message, t=float("nan")):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class StatePerturbation:
    bus: int
    channel: str  # "theta", "omega", "E_qp" or "V"
    magnitude: float


@dataclass(frozen=True)
class GroundFault:
    bus: int
    R_fault: float
    t_on: float
    t_off: float | None = None

    @property
    def clear_time(self) -> float:
        return self.t_on + DEFAULT_FAULT_DURATION if self.t_off is None else self.t_off


@dataclass(frozen=True)
class Scenario:
    t_end: float
    dt_max: float = 0.05
    disturbance: StatePerturbation | GroundFault | Sequence | None = None
    sample_dt: float = 0.01

    def __post_init__(self):
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        for d in self.disturbances:
            if isinstance(d, GroundFault) and not 0 < d.t_on < d.clear_time < self.t_end:
                raise ValueError("fault window must satisfy 0 < t_on < t_off < t_end")

    @property
    def disturbances(self) -> tuple:
        d = self.disturbance
        if d is None:
            return ()
        if isinstance(d, (StatePerturbation, GroundFault)):
            return (d,)
        return tuple(d)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray  # (T, N, 4): theta, V, P, Q
    v_net_trace: np.ndarray
    bus_ids: tuple
    x_star: np.ndarray
    y_star: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def y_dev(self) -> np.ndarray:
        return self.outputs[:, :, :2].reshape(len(self.times), -1)

    def deviation(self) -> np.ndarray:
        """Sup-norm state deviation from equilibrium at every sample."""
        return np.max(np.abs(self.states - self.x_star), axis=1)


def apply_fault(Y: AdmittanceMatrix, index: int, R_fault: float) -> AdmittanceMatrix:
    """Add a shunt conductance ``1/R_fault`` at zero-based bus position ``index``."""
    if not R_fault > 0:
        raise ValueError("R_fault must be positive")
    G = Y.G.copy()
    G[index, index] += 1.0 / R_fault
    return AdmittanceMatrix(G, Y.B.copy())


class _System:
    """Stacked right-hand side for an operating point."""

    def __init__(self, op: OperatingPoint):
        self.op = op
        self.specs = op.specs
        self.refs = [op.refs[b] for b in op.bus_ids]
        self.slices = []
        self.v_idx = []
        start = 0
        for s in self.specs:
            n = STATE_DIM[s.device_kind]
            self.slices.append(slice(start, start + n))
            self.v_idx.append(start + n - 1)
            start += n
        self.th_idx = np.array([sl.start for sl in self.slices])
        self.v_idx = np.array(self.v_idx)
        self.sg_idx = np.array([self.v_idx[k] for k, s in enumerate(self.specs)
                                if s.device_kind == "SG"], dtype=int)
        self.x_star = op.triplet.x_star.copy()
        self.Y = op.Y_red

    def outputs(self, x, Y):
        theta = x[self.th_idx]
        V = x[self.v_idx]
        P, Q = power_injections(Y, theta, V)
        return theta, V, P, Q

    def rhs(self, t, x, Y):
        theta, V, P, Q = self.outputs(x, Y)
        dx = np.empty_like(x)
        for k, (spec, refs, sl) in enumerate(zip(self.specs, self.refs, self.slices)):
            u = (-P[k], -Q[k] / V[k])
            dx[sl] = device_rhs(spec, x[sl], u, refs)
        return dx


def _faulted_reduced(op: OperatingPoint, faults) -> AdmittanceMatrix:
    case = op.case
    Yf = build_admittance(case)
    for f in faults:
        Yf = apply_fault(Yf, f.bus - 1, f.R_fault)
    loads = np.array([complex(b.P_load, -b.Q_load) for b in case.buses]) / op.pf.V ** 2
    passive = [b.id - 1 for b in case.buses if b.bus_kind != "dynamic"]
    return kron_reduce(Yf, passive, loads)[0]


def _perturb(sysm: _System, x0, p: StatePerturbation):
    k = sysm.op.bus_ids.index(p.bus)
    spec = sysm.specs[k]
    labels = ("theta", "omega", "E_qp") if spec.device_kind == "SG" else ("theta", "V")
    ch = "E_qp" if (p.channel == "V" and spec.device_kind == "SG") else p.channel
    if ch not in labels:
        raise ValueError(f"bus {p.bus} ({spec.device_kind}) has no channel {p.channel!r}")
    x0[sysm.slices[k].start + labels.index(ch)] += p.magnitude


def simulate(op: OperatingPoint, scenario: Scenario, *, x0=None,
             rtol: float = RTOL, atol: float = ATOL,
             surrogate_weights=None) -> Trajectory:
    """Integrate the interconnected model over ``[0, scenario.t_end]``.

    ``(P, Q)`` are recomputed from the current ``(theta, V)`` at every stage
    evaluation. A fault swaps in a faulted reduced admittance for its window
    and the pre-fault matrix object afterwards.

    Raises
    ------
    SimulationError
        The adaptive step collapsed (reported with the time reached).
    DomainError
        A generator internal voltage fell to the floor (bus and time given).
    """
    sysm = _System(op)
    x = sysm.x_star.copy() if x0 is None else np.array(x0, dtype=float)
    faults = []
    for d in scenario.disturbances:
        if isinstance(d, StatePerturbation):
            _perturb(sysm, x, d)
        else:
            faults.append(d)
    # piecewise-constant admittance schedule
    cuts = sorted({0.0, scenario.t_end, *[f.t_on for f in faults],
                   *[f.clear_time for f in faults]})
    segments = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        active = [f for f in faults if f.t_on <= a < f.clear_time]
        segments.append((a, b, _faulted_reduced(op, active) if active else op.Y_red))

    n_samples = int(round(scenario.t_end / scenario.sample_dt))
    t_samples = np.linspace(0.0, scenario.t_end, n_samples + 1)

    def floor_event(t, y, Y):
        return float(np.min(y[sysm.sg_idx]) - E_QP_FLOOR) if sysm.sg_idx.size else 1.0

    floor_event.terminal = True
    floor_event.direction = -1

    times, states, ys = [], [], []
    for si, (a, b, Y) in enumerate(segments):
        last = si == len(segments) - 1
        mask = (t_samples >= a) & ((t_samples <= b) if last else (t_samples < b))
        t_eval = np.append(t_samples[mask], b)
        if t_eval.size > 1 and t_eval[-2] == b:
            t_eval = t_eval[:-1]
        sol = solve_ivp(sysm.rhs, (a, b), x, method="RK45", t_eval=t_eval,
                        max_step=scenario.dt_max, rtol=rtol, atol=atol, args=(Y,),
                        events=floor_event)
        if sol.status == -1:
            t_fail = float(sol.t[-1]) if sol.t.size else a
            raise SimulationError(f"integration failed near t = {t_fail:.6g} s: "
                                  f"{sol.message}", t_fail)
        if sol.status == 1:
            te = float(sol.t_events[0][0])
            xe = sol.y_events[0][0]
            k = int(np.argmin(xe[sysm.sg_idx]))
            bus = [b_ for b_, s in zip(op.bus_ids, sysm.specs) if s.device_kind == "SG"][k]
            raise DomainError(f"bus {bus}: SG internal voltage reached floor at t = {te:.6g} s")
        x = sol.y[:, -1].copy()
        keep = mask.sum()
        times.append(sol.t[:keep])
        states.append(sol.y[:, :keep].T)
        ys.extend([Y] * keep)

    T = np.concatenate(times)
    X = np.concatenate(states)
    outs = np.empty((T.size, op.n, 4))
    for k in range(T.size):
        outs[k] = np.column_stack(sysm.outputs(X[k], ys[k]))
    y_star = op.triplet.y_dev_star
    traj = Trajectory(T, X, outs, np.zeros(T.size), op.bus_ids, sysm.x_star.copy(), y_star,
                      meta={"segments": [(a, b) for a, b, _ in segments]})
    S = assemble_sdev(op.odpms)
    weights = default_surrogate_weights(op) if surrogate_weights is None else surrogate_weights
    traj.v_net_trace = _v_net(traj, S, op.idpm.matrix)
    traj.meta["v_surrogate"] = lyapunov_surrogate_trace(traj, S, op.idpm.matrix, weights)[0]
    return traj


def _v_net(traj: Trajectory, S_dev, S_net) -> np.ndarray:
    S = symmetric_part(S_dev) + symmetric_part(S_net)
    dy = traj.y_dev - traj.y_star
    return 0.5 * np.einsum("ti,ij,tj->t", dy, S, dy)


def default_surrogate_weights(op: OperatingPoint) -> list[np.ndarray]:
    return [storage_weights(s, o) for s, o in zip(op.specs, op.odpms)]


def lyapunov_surrogate_trace(traj: Trajectory, S_dev, S_net, device_quadratic_weights,
                             slack: float = 1e-6, t_from: float = 0.0):
    """Quadratic surrogate of the interconnection Lyapunov candidate.

    ``V(t) = sum_i 0.5 x_i^T P_i x_i + 0.5 y^T (sym(S_net) + sym(S_dev)) y``
    in equilibrium-shifted coordinates.

    Returns
    -------
    (ndarray, bool)
        The trace and whether its forward differences after ``t_from`` stay
        below ``slack``.
    """
    dx = traj.states - traj.x_star
    dev = np.zeros(len(traj.times))
    start = 0
    for P in device_quadratic_weights:
        P = np.asarray(P, dtype=float)
        n = P.shape[0]
        seg = dx[:, start:start + n]
        dev += 0.5 * np.einsum("ti,ij,tj->t", seg, P, seg)
        start += n
    if start != dx.shape[1]:
        raise ValueError("surrogate weights do not cover the state vector")
    v = dev + _v_net(traj, S_dev, S_net)
    after = v[traj.times >= t_from]
    ok = bool(after.size < 2 or np.max(np.diff(after)) <= slack)
    return v, ok


def format_number(v: float) -> str:
    """Fixed-point decimal with 12 significant digits."""
    return np.format_float_positional(float(v), precision=12, unique=False,
                                      fractional=False, trim="-")


def write_trajectory_csv(traj: Trajectory, out) -> str:
    """Write the trajectory table; ``out`` is a path or ``None`` (return text only)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["time"]
    for b in traj.bus_ids:
        header += [f"theta_{b}", f"V_{b}", f"P_{b}", f"Q_{b}"]
    header.append("v_surrogate")
    w.writerow(header)
    vs = traj.meta.get("v_surrogate", traj.v_net_trace)
    for k, t in enumerate(traj.times):
        row = [format_number(t)]
        row += [format_number(v) for v in traj.outputs[k].ravel()]
        row.append(format_number(vs[k]))
        w.writerow(row)
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
