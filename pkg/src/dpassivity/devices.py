"""Device dynamics and closed-form output-differential passivity matrices.

State layouts
-------------
SG : ``(theta, omega, E_qp)`` -- rotor angle, frequency deviation and
     q-axis transient internal voltage. The output voltage is ``E_qp``.
CD, QD : ``(theta, V)``.

Inputs follow ``u = -(P, Q/V)`` throughout, so a device sees the negated
network output. The integral of the frequency deviation in the generator
self-loop is carried as ``theta - theta_star``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .case import CdParams, DeviceSpec, QdParams, SgParams, Setpoints

__all__ = [
    "DomainError", "Odpm", "LinearDevice", "DeviceRefs", "E_QP_FLOOR",
    "SIGMA_MARGIN", "STATE_DIM", "state_labels", "device_rhs",
    "device_steady_state", "linearize_device", "odpm_sg", "odpm_cd",
    "odpm_qd", "device_odpm", "symmetric_part", "with_diagonal_level",
    "storage_weights",
]

E_QP_FLOOR = 1e-6
SIGMA_MARGIN = 1e-6
STATE_DIM = {"SG": 3, "CD": 2, "QD": 2}


class DomainError(ArithmeticError):
    """A device state left the domain where its model is defined."""


def state_labels(kind: str) -> tuple[str, ...]:
    return ("theta", "omega", "E_qp") if kind == "SG" else ("theta", "V")


@dataclass(frozen=True)
class DeviceRefs:
    """Constant references that hold a device at its operating point."""

    theta_star: float
    V_star: float
    P_star: float
    Q_star: float
    Pg_star: float = 0.0
    Ef_star: float = 0.0
    u_star: float = 0.0

    def as_dict(self, kind: str) -> dict[str, float]:
        if kind == "SG":
            return {"Pg_star": self.Pg_star, "Ef_star": self.Ef_star}
        if kind == "QD":
            return {"u_star": self.u_star}
        return {}


@dataclass(frozen=True)
class Odpm:
    matrix: np.ndarray
    sigma1: float
    sigma2: float
    valid: bool
    violated_conditions: tuple[str, ...] = field(default_factory=tuple)

    @property
    def sym(self) -> np.ndarray:
        return symmetric_part(self.matrix)


@dataclass(frozen=True)
class LinearDevice:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def transfer(self, s: complex) -> np.ndarray:
        """``C (sI - A)^{-1} B`` at a complex frequency."""
        n = self.A.shape[0]
        return self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B.astype(complex))


def symmetric_part(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"symmetric_part needs a square matrix, got shape {M.shape}")
    return (M + M.T) / 2.0


# ---------------------------------------------------------------------------
# dynamics


def device_rhs(spec: DeviceSpec, state, u_dev, refs: DeviceRefs) -> np.ndarray:
    """Time derivative of one device state for input ``u_dev = -(P, Q/V)``."""
    x = np.asarray(state, dtype=float)
    u1, u2 = float(u_dev[0]), float(u_dev[1])
    p = spec.params
    if spec.device_kind == "SG":
        theta, omega, e = x
        if not e > E_QP_FLOOR:
            raise DomainError(f"SG internal voltage {e:.3e} at or below floor {E_QP_FLOOR}")
        dth = theta - refs.theta_star
        de = e - refs.V_star
        P = -u1
        Q = -u2 * e
        Pg = -p.K_I * dth - p.K_p * omega + refs.Pg_star - p.K_wv * de
        Ef = -p.K_E * de + refs.Ef_star - p.K_vtheta * dth - p.K_vomega * omega
        return np.array([
            omega,
            (-p.D * omega - P + Pg) / p.M,
            (-e - (p.x_d - p.x_dp) * Q / e + Ef) / p.T_d,
        ])
    theta, v = x
    P = -u1
    Q = -u2 * v
    dth = theta - refs.theta_star
    theta_dot = (-dth - p.D1 * (P - refs.P_star) - p.K_wv * (v - refs.V_star)) / p.tau1
    cross = p.K_vtheta * dth + p.K_vomega * theta_dot
    if spec.device_kind == "CD":
        v_dot = (-(v - refs.V_star) - p.D2 * (Q - refs.Q_star) - cross) / p.tau2
    elif spec.device_kind == "QD":
        v_dot = (-v * (v - refs.u_star) - p.D2 * Q - cross) / p.tau2
    else:
        raise ValueError(f"unknown device kind {spec.device_kind!r}")
    return np.array([theta_dot, v_dot])


def device_steady_state(spec: DeviceSpec) -> tuple[np.ndarray, DeviceRefs]:
    """Equilibrium state and constant references for the spec's setpoints."""
    sp = spec.setpoints
    refs = DeviceRefs(theta_star=sp.theta_star, V_star=sp.V_star,
                      P_star=sp.P_star, Q_star=sp.Q_star)
    if spec.device_kind == "SG":
        p = spec.params
        e = sp.V_star
        refs = replace(refs, Pg_star=sp.P_star,
                       Ef_star=e + (p.x_d - p.x_dp) * sp.Q_star / e)
        return np.array([sp.theta_star, 0.0, e]), refs
    if spec.device_kind == "QD":
        refs = replace(refs, u_star=spec.params.D2 * sp.Q_star / sp.V_star + sp.V_star)
    return np.array([sp.theta_star, sp.V_star]), refs


def equilibrium_input(spec: DeviceSpec) -> np.ndarray:
    sp = spec.setpoints
    return -np.array([sp.P_star, sp.Q_star / sp.V_star])


def linearize_device(spec: DeviceSpec, eq=None) -> LinearDevice:
    """Analytic Jacobians of :func:`device_rhs` at the device equilibrium.

    ``eq`` may be the ``(state, refs)`` pair from :func:`device_steady_state`;
    it is recomputed from the spec when omitted.
    """
    if eq is None:
        eq = device_steady_state(spec)
    _, refs = eq
    p = spec.params
    if spec.device_kind == "SG":
        xdd = p.x_d - p.x_dp
        A = np.array([
            [0.0, 1.0, 0.0],
            [-p.K_I / p.M, -(p.D + p.K_p) / p.M, -p.K_wv / p.M],
            [-p.K_vtheta / p.T_d, -p.K_vomega / p.T_d, -(1.0 + p.K_E) / p.T_d],
        ])
        B = np.array([[0.0, 0.0], [1.0 / p.M, 0.0], [0.0, xdd / p.T_d]])
        C = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        return LinearDevice(A, B, C)
    vs, qs = refs.V_star, refs.Q_star
    t1, t2 = p.tau1, p.tau2
    if spec.device_kind == "CD":
        a_vv = -1.0 - p.D2 * qs / vs
    else:
        a_vv = -vs
    A = np.array([
        [-1.0 / t1, -p.K_wv / t1],
        [(-p.K_vtheta + p.K_vomega / t1) / t2, (a_vv + p.K_vomega * p.K_wv / t1) / t2],
    ])
    B = np.array([
        [p.D1 / t1, 0.0],
        [-p.K_vomega * p.D1 / (t1 * t2), p.D2 * vs / t2],
    ])
    C = np.eye(2)
    return LinearDevice(A, B, C)


# ---------------------------------------------------------------------------
# passivity matrices


def _sg_sigmas(params: SgParams, sigma1=None, sigma2=None) -> tuple[float, float]:
    xdd = params.x_d - params.x_dp
    if sigma1 is None:
        sigma1 = params.sigma1
    if sigma2 is None:
        sigma2 = params.sigma2
    if sigma1 is None:
        sigma1 = params.K_I - SIGMA_MARGIN
    if sigma2 is None:
        sigma2 = ((params.K_E + 1.0) / xdd if xdd != 0 else math.inf) - SIGMA_MARGIN
    return float(sigma1), float(sigma2)


def odpm_sg(params: SgParams, sigma1: float | None = None,
            sigma2: float | None = None) -> Odpm:
    """ODPM of the flux-decay generator under PID-like self-loop and cross-loop control.

    ``sigma1``/``sigma2`` default to the parameter overrides, else to their
    strict upper bounds minus :data:`SIGMA_MARGIN`.
    """
    p = params
    xdd = p.x_d - p.x_dp
    s1, s2 = _sg_sigmas(p, sigma1, sigma2)
    bad = []
    if not s1 < p.K_I:
        bad.append("sg: sigma1 < K_I")
    if not (xdd > 0 and s2 < (p.K_E + 1.0) / xdd):
        bad.append("sg: sigma2 < (K_E + 1)/(x_d - x_dp)")
    if not p.K_p + p.D > 0:
        bad.append("sg: K_p + D > 0")
    if not xdd > 0:
        bad.append("sg: x_d - x_dp > 0")
    elif not p.K_vomega < 2.0 * math.sqrt(max(p.T_d * (p.D + p.K_p) * xdd, 0.0)):
        bad.append("sg: K_vomega < 2*sqrt(T_d*(D + K_p)*(x_d - x_dp))")
    off = p.K_vtheta / xdd if xdd != 0 else math.nan
    matrix = np.array([[s1, p.K_wv], [off, s2]])
    return Odpm(matrix, s1, s2, not bad, tuple(bad))


def _droop_conditions(kind: str, p, V_star: float) -> list[str]:
    bad = [f"{kind}: {n} > 0" for n in ("D1", "D2", "tau1", "tau2")
           if not getattr(p, n) > 0]
    if not bad:
        bound = 2.0 * math.sqrt(p.tau1 * p.tau2 * V_star * p.D2 / p.D1)
        if not p.K_vomega <= bound:
            bad.append(f"{kind}: K_vomega <= 2*sqrt(tau1*tau2*V*D2/D1)")
    return bad


def odpm_cd(params: CdParams, Q_star: float, V_star: float) -> Odpm:
    """ODPM of the conventional droop inverter with cross-loop control."""
    if not V_star > 0:
        raise ValueError("V_star must be positive")
    p = params
    d1 = p.D1 if p.D1 != 0 else math.nan
    d2 = p.D2 if p.D2 != 0 else math.nan
    s1 = 1.0 / d1
    s2 = (p.D2 * Q_star + V_star) / (d2 * V_star ** 2)
    matrix = np.array([[s1, p.K_wv / d1], [p.K_vtheta / (d2 * V_star), s2]])
    bad = _droop_conditions("cd", p, V_star)
    return Odpm(matrix, s1, s2, not bad, tuple(bad))


def odpm_qd(params: QdParams, V_star: float) -> Odpm:
    """ODPM of the quadratic droop inverter with cross-loop control."""
    if not V_star > 0:
        raise ValueError("V_star must be positive")
    p = params
    d1 = p.D1 if p.D1 != 0 else math.nan
    d2 = p.D2 if p.D2 != 0 else math.nan
    matrix = np.array([[1.0 / d1, p.K_wv / d1], [p.K_vtheta / (d2 * V_star), 1.0 / d2]])
    bad = _droop_conditions("qd", p, V_star)
    return Odpm(matrix, 1.0 / d1, 1.0 / d2, not bad, tuple(bad))


def device_odpm(spec: DeviceSpec) -> Odpm:
    sp = spec.setpoints
    if spec.device_kind == "SG":
        return odpm_sg(spec.params)
    if spec.device_kind == "CD":
        return odpm_cd(spec.params, sp.Q_star, sp.V_star)
    return odpm_qd(spec.params, sp.V_star)


def with_diagonal_level(spec: DeviceSpec, sigma1: float | None = None,
                        sigma2: float | None = None) -> DeviceSpec:
    """Retune self-loop gains so the ODPM diagonal reaches the given levels.

    The generator maps ``sigma1 -> K_I`` and ``sigma2 -> K_E`` so that each
    level is the supremum of the admissible index (the ODPM then sits
    :data:`SIGMA_MARGIN` below it). Droop inverters map the levels onto
    their droop gains; the CD voltage channel needs the setpoints, so call
    this on an operating-point spec.
    """
    p = spec.params
    kw = {}
    if spec.device_kind == "SG":
        if sigma1 is not None:
            kw.update(K_I=float(sigma1), sigma1=None)
        if sigma2 is not None:
            kw.update(K_E=float(sigma2) * (p.x_d - p.x_dp) - 1.0, sigma2=None)
    else:
        if sigma1 is not None:
            if not sigma1 > 0:
                raise ValueError(f"droop level sigma1 must be positive, got {sigma1}")
            kw["D1"] = 1.0 / sigma1
        if sigma2 is not None:
            sp = spec.setpoints
            if spec.device_kind == "CD":
                den = sigma2 * sp.V_star ** 2 - sp.Q_star
                if not den > 0:
                    raise ValueError(f"CD voltage level {sigma2} unreachable at "
                                     f"Q*={sp.Q_star:.4g}, V*={sp.V_star:.4g}")
                kw["D2"] = sp.V_star / den
            else:
                if not sigma2 > 0:
                    raise ValueError(f"droop level sigma2 must be positive, got {sigma2}")
                kw["D2"] = 1.0 / sigma2
    return replace(spec, params=replace(p, **kw))


def storage_weights(spec: DeviceSpec, odpm: Odpm | None = None) -> np.ndarray:
    """Hessian of the quadratic storage of the linearized device.

    For the generator this is ``diag(K_I - sigma1, M, (1 + K_E - sigma2 (x_d - x_dp))/(x_d - x_dp))``
    over ``(theta, omega, E_qp)``; the droop inverters' equivalent systems
    are memoryless, so their storage is zero. Used as the default device
    term in the Lyapunov surrogate trace.
    """
    if odpm is None:
        odpm = device_odpm(spec)
    if spec.device_kind == "SG":
        p = spec.params
        xdd = p.x_d - p.x_dp
        return np.diag([p.K_I - odpm.sigma1, p.M, (1.0 + p.K_E - odpm.sigma2 * xdd) / xdd])
    return np.zeros((2, 2))


def setpoints_from(theta: float, V: float, P: float, Q: float) -> Setpoints:
    return Setpoints(P_star=float(P), Q_star=float(Q), theta_star=float(theta), V_star=float(V))
