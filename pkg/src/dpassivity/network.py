"""Admittance assembly, power flow and the network passivity matrix.

Bus-indexed arrays are ordered by bus id. The network-side matrices use the
interleaved ordering ``(theta_1, V_1, ..., theta_N, V_N)`` once permuted by
:func:`permutation_matrix`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import kernels
from .case import EquilibriumTriplet, PowerSystemCase
from .devices import (DeviceRefs, device_odpm, device_rhs, device_steady_state,
                      setpoints_from)

__all__ = [
    "AdmittanceMatrix", "PowerFlowSolution", "PowerFlowError", "Idpm",
    "OperatingPoint", "build_admittance", "kron_reduce", "power_injections",
    "solve_power_flow", "jacobian_lossless", "jacobian_lossy",
    "permutation_matrix", "network_jacobian", "build_idpm", "operating_point",
]


class PowerFlowError(RuntimeError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class AdmittanceMatrix:
    G: np.ndarray
    B: np.ndarray

    @classmethod
    def from_complex(cls, Y) -> "AdmittanceMatrix":
        Y = np.asarray(Y, dtype=complex)
        return cls(np.ascontiguousarray(Y.real), np.ascontiguousarray(Y.imag))

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def lossless(self) -> bool:
        return not np.any(self.G)


@dataclass(frozen=True)
class PowerFlowSolution:
    theta: np.ndarray
    V: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class Idpm:
    matrix: np.ndarray
    sym: np.ndarray
    sigma_net: float
    lossless: bool


def build_admittance(case: PowerSystemCase) -> AdmittanceMatrix:
    """Bus admittance matrix from series impedances, line charging and bus shunts.

    Off-nominal tap ratios ``t`` (from-side) scale the from-end diagonal by
    ``1/t^2`` and the mutual terms by ``1/t``.
    """
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for ln in case.lines:
        if ln.r == 0 and ln.x == 0:
            raise ValueError(f"zero-impedance line {ln.from_bus}-{ln.to_bus}")
        ys = 1.0 / complex(ln.r, ln.x)
        ysh = 0.5j * ln.b_shunt
        f, t = ln.from_bus - 1, ln.to_bus - 1
        tap = ln.tap
        Y[f, f] += (ys + ysh) / tap ** 2
        Y[t, t] += ys + ysh
        Y[f, t] -= ys / tap
        Y[t, f] -= ys / tap
    for b in case.buses:
        Y[b.id - 1, b.id - 1] += complex(b.G_shunt, b.B_shunt)
    return AdmittanceMatrix.from_complex(Y)


def kron_reduce(Y: AdmittanceMatrix, eliminate, shunt=None):
    """Eliminate buses by Schur complement.

    Parameters
    ----------
    Y : AdmittanceMatrix
    eliminate : iterable of int
        Zero-based indices of the buses to remove.
    shunt : array_like of complex, optional
        Constant-admittance loads added to the diagonal (length ``Y.n``)
        before elimination.

    Returns
    -------
    (AdmittanceMatrix, ndarray)
        Reduced matrix and the zero-based original index of each kept bus.
    """
    n = Y.n
    elim = np.array(sorted(set(int(i) for i in eliminate)), dtype=int)
    keep = np.array([i for i in range(n) if i not in set(elim.tolist())], dtype=int)
    G = Y.G.copy()
    B = Y.B.copy()
    if shunt is not None:
        shunt = np.asarray(shunt, dtype=complex)
        G[np.diag_indices(n)] += shunt.real
        B[np.diag_indices(n)] += shunt.imag
    if elim.size == 0:
        return AdmittanceMatrix(G, B), keep
    try:
        if not np.any(G):
            B22 = B[np.ix_(elim, elim)]
            red = B[np.ix_(keep, keep)] - B[np.ix_(keep, elim)] @ np.linalg.solve(
                B22, B[np.ix_(elim, keep)])
            return AdmittanceMatrix(np.zeros_like(red), red), keep
        Yc = G + 1j * B
        red = Yc[np.ix_(keep, keep)] - Yc[np.ix_(keep, elim)] @ np.linalg.solve(
            Yc[np.ix_(elim, elim)], Yc[np.ix_(elim, keep)])
    except np.linalg.LinAlgError:
        raise ValueError("singular interior block in Kron reduction") from None
    return AdmittanceMatrix.from_complex(red), keep


def power_injections(Y: AdmittanceMatrix, theta, V):
    """Net injections ``(P, Q)`` at every bus for polar voltages ``V∠theta``."""
    return kernels.power_injections(Y.G, Y.B, theta, V)


def jacobian_lossy(Y: AdmittanceMatrix, theta, V):
    """Blocks ``(A', D', E', C')`` of ``d(P, Q/V)/d(theta, V)`` for any network."""
    return kernels.jacobian_blocks(Y.G, Y.B, theta, V)


def jacobian_lossless(Y: AdmittanceMatrix, theta, V):
    """Blocks ``(A, D, C)`` of the symmetric Jacobian of a lossless network."""
    if np.any(Y.G):
        raise ValueError("jacobian_lossless requires G == 0")
    A, D, _, C = kernels.jacobian_blocks(Y.G, Y.B, theta, V)
    return A, D, C


def network_jacobian(Y: AdmittanceMatrix, theta, V) -> np.ndarray:
    """Block-ordered ``[[A, D], [E, C]]`` (rows ``P, Q/V``; columns ``theta, V``)."""
    if Y.lossless:
        A, D, C = jacobian_lossless(Y, theta, V)
        return np.block([[A, D], [D.T, C]])
    A, D, E, C = jacobian_lossy(Y, theta, V)
    return np.block([[A, D], [E, C]])


def permutation_matrix(n: int) -> np.ndarray:
    """Map block ordering ``(theta_1..theta_n, V_1..V_n)`` to interleaved ordering."""
    if n < 1:
        raise ValueError("n must be >= 1")
    Np = np.zeros((2 * n, 2 * n))
    j = np.arange(n)
    Np[2 * j, j] = 1.0
    Np[2 * j + 1, n + j] = 1.0
    return Np


def build_idpm(Y: AdmittanceMatrix, theta, V) -> Idpm:
    """Interleaved network passivity matrix at an operating point."""
    Gnet = network_jacobian(Y, theta, V)
    Np = permutation_matrix(Y.n)
    M = Np @ Gnet @ Np.T
    sym = (M + M.T) / 2.0
    sigma = float(np.linalg.eigvalsh(sym)[0])
    return Idpm(M, sym, sigma, Y.lossless)


# ---------------------------------------------------------------------------
# power flow


def _schedules(case: PowerSystemCase):
    n = case.n_bus
    P = np.zeros(n)
    Q = np.zeros(n)
    for b in case.buses:
        i = b.id - 1
        P[i] = -b.P_load
        Q[i] = -b.Q_load
        if b.id in case.devices:
            P[i] += case.devices[b.id].setpoints.P_star
    return P, Q


def solve_power_flow(case: PowerSystemCase, Y: AdmittanceMatrix | None = None, *,
                     tol: float = 1e-8, max_iter: int = 50,
                     warm_start: PowerFlowSolution | None = None) -> PowerFlowSolution:
    """Newton–Raphson solution of the polar power-flow equations.

    The slack (``case.slack``) holds ``V_setpoint∠theta_setpoint``; every
    other dynamic bus is a PV bus scheduled at its device ``P_star`` minus
    local load; passive buses are PQ load buses.

    Raises
    ------
    PowerFlowError
        No convergence within ``max_iter`` iterations (carries the final
        mismatch norm).
    """
    if Y is None:
        Y = build_admittance(case)
    n = case.n_bus
    slack = case.slack - 1
    dyn = set(i - 1 for i in case.dynamic_ids)
    pv = [i for i in range(n) if i in dyn and i != slack]
    pq = [i for i in range(n) if i not in dyn]
    non_slack = [i for i in range(n) if i != slack]
    P_sched, Q_sched = _schedules(case)

    if warm_start is not None:
        theta = warm_start.theta.copy()
        V = warm_start.V.copy()
    else:
        theta = np.zeros(n)
        V = np.ones(n)
    theta[slack] = case.bus(slack + 1).theta_setpoint
    for i in dyn:
        V[i] = case.bus(i + 1).V_setpoint

    ns = np.array(non_slack, dtype=int)
    pqa = np.array(pq, dtype=int)
    it = 0
    while True:
        P, Q = power_injections(Y, theta, V)
        mis = np.concatenate([P[ns] - P_sched[ns], Q[pqa] - Q_sched[pqa]])
        res = float(np.max(np.abs(mis))) if mis.size else 0.0
        if not np.isfinite(res):
            raise PowerFlowError("power flow diverged (non-finite mismatch)", res, it)
        if res < tol:
            # passes of evaluate / test / update; a solved start counts as one
            return PowerFlowSolution(theta, V, P, Q, it + 1, res)
        if it >= max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations "
                f"(residual {res:.3e})", res, it)
        A, D, E, C = jacobian_lossy(Y, theta, V)
        dQdth = V[:, None] * E
        dQdV = V[:, None] * C + np.diag(Q / V)
        J = np.block([[A[np.ix_(ns, ns)], D[np.ix_(ns, pqa)]],
                      [dQdth[np.ix_(pqa, ns)], dQdV[np.ix_(pqa, pqa)]]])
        try:
            dx = np.linalg.solve(J, -mis)
        except np.linalg.LinAlgError:
            raise PowerFlowError("singular power-flow Jacobian", res, it) from None
        theta[ns] += dx[:ns.size]
        V[pqa] += dx[ns.size:]
        it += 1
        if np.any(V <= 0):
            raise PowerFlowError("power flow produced non-positive voltage", res, it)


# ---------------------------------------------------------------------------
# operating point


@dataclass(frozen=True)
class OperatingPoint:
    """A solved case reduced to its dynamic buses.

    ``case`` carries device setpoints re-read from the solution, so every
    device sits exactly at equilibrium against ``Y_red``.
    """

    case: PowerSystemCase
    pf: PowerFlowSolution
    Y_red: AdmittanceMatrix
    bus_ids: tuple[int, ...]
    theta: np.ndarray
    V: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    refs: dict

    @property
    def n(self) -> int:
        return len(self.bus_ids)

    @property
    def specs(self):
        return [self.case.devices[b] for b in self.bus_ids]

    @cached_property
    def idpm(self) -> Idpm:
        return build_idpm(self.Y_red, self.theta, self.V)

    @cached_property
    def odpms(self):
        return [device_odpm(s) for s in self.specs]

    @cached_property
    def triplet(self) -> EquilibriumTriplet:
        xs = []
        resid = 0.0
        for b, spec in zip(self.bus_ids, self.specs):
            x, refs = device_steady_state(spec)
            k = self.bus_ids.index(b)
            u = -np.array([self.P[k], self.Q[k] / self.V[k]])
            resid = max(resid, float(np.max(np.abs(device_rhs(spec, x, u, refs)))))
            xs.append(x)
        u_star = -np.ravel(np.column_stack([self.P, self.Q / self.V]))
        y_star = np.ravel(np.column_stack([self.theta, self.V]))
        return EquilibriumTriplet(
            x_star=np.concatenate(xs), u_dev_star=u_star, y_dev_star=y_star,
            refs={b: self.refs[b].as_dict(self.case.devices[b].device_kind)
                  for b in self.bus_ids},
            residual=resid)

    def with_specs(self, specs: dict) -> "OperatingPoint":
        """Swap device dynamics while keeping the network operating point.

        Device setpoints are preserved; only control parameters change.
        """
        devices = dict(self.case.devices)
        for b, s in specs.items():
            devices[b] = replace(s, setpoints=devices[b].setpoints)
        case = replace(self.case, devices=devices)
        refs = {b: device_steady_state(case.devices[b])[1] for b in self.bus_ids}
        return replace(self, case=case, refs=refs)


def operating_point(case: PowerSystemCase, *,
                    warm_start: PowerFlowSolution | None = None,
                    tol: float = 1e-8, max_iter: int = 50) -> OperatingPoint:
    """Solve the power flow, Kron-reduce passive buses and anchor devices."""
    Y = build_admittance(case)
    pf = solve_power_flow(case, Y, tol=tol, max_iter=max_iter, warm_start=warm_start)
    loads = np.array([complex(b.P_load, -b.Q_load) for b in case.buses])
    loads = loads / pf.V ** 2
    passive = [b.id - 1 for b in case.buses if b.bus_kind != "dynamic"]
    Y_red, keep = kron_reduce(Y, passive, loads)
    bus_ids = tuple(int(k) + 1 for k in keep)
    theta = pf.theta[keep].copy()
    V = pf.V[keep].copy()
    P, Q = power_injections(Y_red, theta, V)
    devices = dict(case.devices)
    refs: dict[int, DeviceRefs] = {}
    for k, b in enumerate(bus_ids):
        spec = replace(devices[b], setpoints=setpoints_from(theta[k], V[k], P[k], Q[k]))
        devices[b] = spec
        refs[b] = device_steady_state(spec)[1]
    return OperatingPoint(replace(case, devices=devices), pf, Y_red, bus_ids,
                          theta, V, P, Q, refs)
