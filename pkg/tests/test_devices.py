from dataclasses import replace

import numpy as np
import pytest
import sympy as sp

from dpassivity.case import CdParams, DeviceSpec, QdParams, Setpoints, SgParams
from dpassivity.devices import (SIGMA_MARGIN, DomainError, device_odpm, device_rhs,
                                device_steady_state, linearize_device, odpm_cd, odpm_qd,
                                odpm_sg, storage_weights, symmetric_part, with_diagonal_level)

SG_T1 = SgParams(M=0.1607, D=0.8, T_d=6.56, x_d=0.295, x_dp=0.17, K_I=2.68,
                 K_wv=0.066, K_vtheta=0.014, K_vomega=1.56)
CD_T1 = CdParams(tau1=1.0, tau2=10.0, D1=0.37, D2=0.39, K_wv=0.076, K_vtheta=0.076)
QD_T1 = QdParams(tau1=0.8, tau2=8.0, D1=0.37, D2=0.37, K_wv=0.078, K_vtheta=0.078)


def no_cross(p):
    return replace(p, K_wv=0.0, K_vtheta=0.0, K_vomega=0.0)


# ---------------------------------------------------------------------------
# dynamics


def test_sg_fixed_point():
    spec = DeviceSpec("SG", SG_T1, Setpoints(P_star=0.5, Q_star=0.1, theta_star=0.2, V_star=1.02))
    x, refs = device_steady_state(spec)
    u = (-0.5, -0.1 / 1.02)
    assert np.max(np.abs(device_rhs(spec, x, u, refs))) < 1e-10


def test_cd_angle_offset():
    spec = DeviceSpec("CD", no_cross(CD_T1), Setpoints(P_star=0.3, Q_star=0.05, theta_star=0.1))
    x, refs = device_steady_state(spec)
    x = x + np.array([0.1, 0.0])
    dx = device_rhs(spec, x, (-0.3, -0.05), refs)
    assert spec.params.tau1 * dx[0] == pytest.approx(-0.1, abs=1e-14)
    assert dx[1] == pytest.approx(0.0, abs=1e-14)


def test_qd_voltage_offset_against_symbolic():
    V, Vs, Qs, D2, tau2, us = sp.symbols("V V_s Q_s D2 tau2 u_s")
    # quadratic droop voltage law, no cross terms
    vdot = (-V * (V - us) - D2 * Qs) / tau2
    ustar = D2 * Qs / Vs + Vs
    vals = {Vs: 1.01, Qs: 0.2, D2: 0.37, tau2: 8.0}
    delta = 0.03
    expected = float(vdot.subs(us, ustar).subs(vals).subs(V, vals[Vs] + delta))

    spec = DeviceSpec("QD", no_cross(QD_T1), Setpoints(P_star=0.0, Q_star=0.2, V_star=1.01))
    x, refs = device_steady_state(spec)
    V_now = 1.01 + delta
    got = device_rhs(spec, x + np.array([0.0, delta]), (0.0, -0.2 / V_now), refs)[1]
    # Q is held at Q*, so u2 = -Q*/V at the perturbed voltage
    assert got == pytest.approx(expected, rel=1e-12)


def test_sg_floor_raises():
    spec = DeviceSpec("SG", SG_T1)
    x, refs = device_steady_state(spec)
    with pytest.raises(DomainError):
        device_rhs(spec, np.array([0.0, 0.0, 0.0]), (0.0, 0.0), refs)


def test_sg_steady_state_references():
    spec = DeviceSpec("SG", SG_T1, Setpoints(P_star=0.5, Q_star=0.1, V_star=1.0))
    x, refs = device_steady_state(spec)
    assert x[1] == 0.0
    assert refs.Pg_star == pytest.approx(0.5)
    assert refs.Ef_star == pytest.approx(1.0125)


def test_qd_u_star_zero_q():
    spec = DeviceSpec("QD", QD_T1, Setpoints(Q_star=0.0, V_star=1.0))
    assert device_steady_state(spec)[1].u_star == pytest.approx(1.0)


def test_cd_steady_state_exact():
    spec = DeviceSpec("CD", no_cross(CD_T1), Setpoints(theta_star=0.3, V_star=0.98))
    x, _ = device_steady_state(spec)
    assert x.tolist() == [0.3, 0.98]


# ---------------------------------------------------------------------------
# linearization


def test_cd_linearization_no_cross():
    spec = DeviceSpec("CD", no_cross(CD_T1))
    dev = linearize_device(spec)
    assert np.allclose(dev.A, np.diag([-1.0, -0.1]), atol=1e-15)
    assert np.allclose(dev.B, np.diag([0.37, 0.039]), atol=1e-15)


def test_sg_voltage_mode_no_cross():
    p = replace(no_cross(SG_T1), K_E=0.5)
    dev = linearize_device(DeviceSpec("SG", p))
    ev = np.linalg.eigvals(dev.A)
    assert np.min(np.abs(ev - (-(p.K_E + 1) / p.T_d))) < 1e-12


def _fd_device(spec, h=1e-7):
    x0, refs = device_steady_state(spec)
    u0 = -np.array([spec.setpoints.P_star, spec.setpoints.Q_star / spec.setpoints.V_star])
    n = x0.size
    A = np.empty((n, n))
    B = np.empty((n, 2))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        A[:, k] = (device_rhs(spec, x0 + e, u0, refs) - device_rhs(spec, x0 - e, u0, refs)) / (2 * h)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        B[:, k] = (device_rhs(spec, x0, u0 + e, refs) - device_rhs(spec, x0, u0 - e, refs)) / (2 * h)
    return A, B


@pytest.mark.parametrize("kind, params", [
    ("SG", replace(SG_T1, K_p=0.3, K_E=0.7)), ("CD", replace(CD_T1, K_vomega=0.5)),
    ("QD", replace(QD_T1, K_vomega=0.4))])
def test_linearization_matches_finite_differences(kind, params):
    spec = DeviceSpec(kind, params, Setpoints(P_star=0.4, Q_star=-0.2, theta_star=0.1, V_star=1.03))
    dev = linearize_device(spec)
    A, B = _fd_device(spec)
    assert np.allclose(dev.A, A, atol=1e-7)
    assert np.allclose(dev.B, B, atol=1e-7)


def test_zero_perturbation():
    dev = linearize_device(DeviceSpec("SG", SG_T1))
    assert not np.any(dev.A @ np.zeros(3) + dev.B @ np.zeros(2))


# ---------------------------------------------------------------------------
# passivity matrices


def test_odpm_sg_table1():
    o = odpm_sg(SG_T1, 2.15, 2.68)
    assert np.allclose(o.matrix, [[2.15, 0.066], [0.112, 2.68]], atol=1e-12)
    printed = np.array([[2.15, 0.07], [0.11, 2.68]])
    assert np.all(np.abs(o.matrix - printed) <= 0.005 + 1e-12)
    assert o.valid


def test_odpm_sg_no_cross_is_diagonal():
    o = odpm_sg(no_cross(SG_T1), 2.15, 2.68)
    assert np.array_equal(o.matrix, np.diag([2.15, 2.68]))


def test_odpm_sg_kvomega_bound():
    bound = 2 * np.sqrt(6.56 * 0.8 * 0.125)
    assert bound == pytest.approx(1.620, abs=1e-3)
    assert odpm_sg(SG_T1).valid
    bad = odpm_sg(replace(SG_T1, K_vomega=1.1 * bound))
    assert not bad.valid and any("K_vomega" in c for c in bad.violated_conditions)


def test_odpm_sg_default_sigmas():
    o = odpm_sg(SG_T1)
    assert o.sigma1 == pytest.approx(SG_T1.K_I - SIGMA_MARGIN)
    assert o.sigma2 == pytest.approx(1 / 0.125 - SIGMA_MARGIN)


def test_odpm_sg_sigma_above_bound_invalid():
    o = odpm_sg(SG_T1, sigma1=3.0)
    assert not o.valid and any("sigma1" in c for c in o.violated_conditions)


def test_odpm_cd_table1():
    o = odpm_cd(CD_T1, Q_star=0.0, V_star=1.0)
    assert np.allclose(o.matrix, [[2.7027, 0.2054], [0.1949, 2.5641]], atol=1e-4)
    assert abs(o.matrix[0, 1] - 0.21) <= 0.01


def test_odpm_cd_no_cross_diagonal():
    o = odpm_cd(no_cross(CD_T1), Q_star=0.1, V_star=1.05)
    d2v = 0.39 * 1.05
    assert o.matrix[0, 1] == o.matrix[1, 0] == 0.0
    assert o.matrix[1, 1] == pytest.approx((0.39 * 0.1 + 1.05) / (d2v * 1.05))


def test_odpm_qd_table1():
    o = odpm_qd(QD_T1, V_star=1.0)
    assert np.allclose(o.matrix, [[2.7027, 0.2108], [0.2108, 2.7027]], atol=1e-4)


def test_odpm_qd_no_cross():
    o = odpm_qd(no_cross(QD_T1), V_star=1.0)
    assert np.allclose(o.matrix, np.diag([1 / 0.37, 1 / 0.37]))


def test_odpm_qd_kvomega_above_bound():
    bound = 2 * np.sqrt(0.8 * 8.0 * 1.0 * 0.37 / 0.37)
    o = odpm_qd(replace(QD_T1, K_vomega=1.01 * bound), V_star=1.0)
    assert not o.valid
    assert any(c.startswith("qd: K_vomega") for c in o.violated_conditions)


@pytest.mark.parametrize("M, expected", [
    ([[0, 1], [0, 0]], [[0, 0.5], [0.5, 0]]),
    ([[1, 2], [2, 3]], [[1, 2], [2, 3]]),
    ([[2.15, 0.07], [0.11, 2.68]], [[2.15, 0.09], [0.09, 2.68]]),
])
def test_symmetric_part(M, expected):
    assert np.allclose(symmetric_part(M), expected, atol=1e-15)


def test_symmetric_part_rejects_non_square():
    with pytest.raises(ValueError):
        symmetric_part(np.ones((2, 3)))


# ---------------------------------------------------------------------------
# level map and storage


@pytest.mark.parametrize("kind, params", [("SG", SG_T1), ("CD", CD_T1), ("QD", QD_T1)])
def test_diagonal_level_map(kind, params):
    spec = DeviceSpec(kind, params, Setpoints(Q_star=0.15, V_star=1.02))
    tuned = with_diagonal_level(spec, 1.7, 3.1)
    o = device_odpm(tuned)
    assert np.allclose(np.diag(o.matrix), [1.7, 3.1], atol=2 * SIGMA_MARGIN)


def test_cd_level_unreachable():
    spec = DeviceSpec("CD", CD_T1, Setpoints(Q_star=2.0, V_star=1.0))
    with pytest.raises(ValueError, match="unreachable"):
        with_diagonal_level(spec, sigma2=1.5)


def _supply_form(dev, S, P):
    """Matrix of ``y'^T (u - S y) - x^T P x'`` as a quadratic form in (x, u)."""
    A, B, C = dev.A, dev.B, dev.C
    n = A.shape[0]
    CA, CB = C @ A, C @ B
    Q = np.zeros((n + 2, n + 2))
    Q[:n, n:] += CA.T - P @ B
    Q[n:, n:] += CB.T
    Q[:n, :n] -= CA.T @ S @ C + P @ A
    Q[n:, :n] -= CB.T @ S @ C
    return (Q + Q.T) / 2


@pytest.mark.parametrize("kind, params", [
    ("SG", SG_T1), ("SG", replace(SG_T1, K_p=0.4, K_E=1.5)), ("CD", CD_T1),
    ("CD", replace(CD_T1, K_vomega=1.0)), ("QD", QD_T1), ("QD", replace(QD_T1, K_vomega=2.0))])
def test_storage_certifies_dissipation(kind, params):
    spec = DeviceSpec(kind, params, Setpoints(P_star=0.2, Q_star=0.1, V_star=1.0))
    o = device_odpm(spec)
    assert o.valid
    Q = _supply_form(linearize_device(spec), o.matrix, storage_weights(spec, o))
    assert np.linalg.eigvalsh(Q)[0] >= -1e-9
    assert np.all(np.linalg.eigvalsh(storage_weights(spec, o)) >= 0)
