"""Independent reference computations used by the tests.

Nothing here calls the package's network kernels: injections come from
complex phasor arithmetic and linearizations from central differences.
"""

from dataclasses import replace

import numpy as np

from dpassivity.case import (BusRecord, CdParams, DeviceSpec, LineRecord, PowerSystemCase,
                             QdParams, Setpoints, SgParams)
from dpassivity.devices import device_rhs, device_steady_state


def phasor_injections(G, B, theta, V):
    """``S = V * conj(Y V)`` in complex arithmetic."""
    Y = np.asarray(G) + 1j * np.asarray(B)
    Vc = np.asarray(V) * np.exp(1j * np.asarray(theta))
    S = Vc * np.conj(Y @ Vc)
    return S.real, S.imag


def fd_network_jacobian(G, B, theta, V, h=1e-6):
    """Central differences of ``(P, Q/V)`` w.r.t. ``(theta, V)``; block ordered."""
    theta = np.asarray(theta, float)
    V = np.asarray(V, float)
    n = theta.size

    def f(z):
        P, Q = phasor_injections(G, B, z[:n], z[n:])
        return np.concatenate([P, Q / z[n:]])

    z0 = np.concatenate([theta, V])
    J = np.empty((2 * n, 2 * n))
    for k in range(2 * n):
        e = np.zeros(2 * n)
        e[k] = h
        J[:, k] = (f(z0 + e) - f(z0 - e)) / (2 * h)
    return J


def fd_closed_loop(op, h=1e-7):
    """Central-difference Jacobian of the stacked nonlinear model at ``x*``."""
    specs = op.specs
    refs = [device_steady_state(s)[1] for s in specs]
    dims = [3 if s.device_kind == "SG" else 2 for s in specs]
    starts = np.cumsum([0] + dims[:-1])
    G, B = op.Y_red.G, op.Y_red.B

    def rhs(x):
        theta = np.array([x[s] for s in starts])
        V = np.array([x[s + d - 1] for s, d in zip(starts, dims)])
        P, Q = phasor_injections(G, B, theta, V)
        out = []
        for k, (spec, r, s, d) in enumerate(zip(specs, refs, starts, dims)):
            out.append(device_rhs(spec, x[s:s + d], (-P[k], -Q[k] / V[k]), r))
        return np.concatenate(out)

    x0 = np.concatenate([device_steady_state(s)[0] for s in specs])
    n = x0.size
    J = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        J[:, k] = (rhs(x0 + e) - rhs(x0 - e)) / (2 * h)
    return J


def match_spectra(a, b):
    """Largest distance after optimally pairing two eigenvalue lists."""
    from scipy.optimize import linear_sum_assignment
    cost = np.abs(np.subtract.outer(a, b))
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


# ---------------------------------------------------------------------------
# random lossless corpus


def random_lossless_case(rng, n_min=3, n_max=10):
    """Random connected lossless case, all devices diagonal (no cross control).

    Passive buses carry reactive load only, so the Kron-reduced network
    stays lossless.
    """
    n = int(rng.integers(n_min, n_max + 1))
    n_passive = int(rng.integers(0, min(2, n - 2) + 1))
    passive = set(rng.choice(np.arange(2, n + 1), size=n_passive, replace=False).tolist())
    lines = []
    for k in range(2, n + 1):
        lines.append(LineRecord(int(rng.integers(1, k)), k, 0.0, float(rng.uniform(0.05, 0.5))))
    for _ in range(int(rng.integers(0, n))):
        a, b = sorted(rng.choice(np.arange(1, n + 1), size=2, replace=False).tolist())
        lines.append(LineRecord(a, b, 0.0, float(rng.uniform(0.1, 0.8))))
    shunt = float(rng.uniform(0.0, 1.5))
    buses = []
    devices = {}
    for i in range(1, n + 1):
        kind = "passive" if i in passive else "dynamic"
        buses.append(BusRecord(i, kind, 1.0, 0.0, 0.0, float(rng.uniform(0, 0.2)), 0.0,
                               shunt * float(rng.uniform(0.5, 1.0))))
        if kind == "dynamic":
            devices[i] = random_device(rng)
    return PowerSystemCase(1.0, tuple(buses), tuple(lines), devices)


def random_device(rng):
    kind = ("SG", "CD", "QD")[int(rng.integers(0, 3))]
    sp = Setpoints(P_star=float(rng.uniform(-0.3, 0.3)))
    if kind == "SG":
        xdp = float(rng.uniform(0.1, 0.3))
        p = SgParams(M=float(rng.uniform(0.05, 0.5)), D=float(rng.uniform(0.3, 2.0)),
                     T_d=float(rng.uniform(1.0, 8.0)), x_d=xdp + float(rng.uniform(0.05, 0.3)),
                     x_dp=xdp, K_I=float(rng.uniform(0.5, 5.0)), K_E=float(rng.uniform(-0.5, 3.0)))
    elif kind == "CD":
        p = CdParams(float(rng.uniform(0.2, 2)), float(rng.uniform(0.5, 10)),
                     float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 1)))
    else:
        p = QdParams(float(rng.uniform(0.2, 2)), float(rng.uniform(0.5, 8)),
                     float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 1)))
    return DeviceSpec(kind, p, sp)


def retune_levels(op, rng):
    """Random diagonal levels around the network shortage (exercises both verdicts)."""
    from dpassivity.devices import with_diagonal_level
    base = max(-op.idpm.sigma_net, 0.2)
    specs = {}
    for b in op.bus_ids:
        spec = op.case.devices[b]
        s1, s2 = (float(v) for v in rng.uniform(0.6, 1.6, size=2) * base)
        if spec.device_kind == "CD":
            floor = spec.setpoints.Q_star / spec.setpoints.V_star ** 2
            s2 = max(s2, floor + 0.05)
        specs[b] = with_diagonal_level(spec, s1, s2)
    return op.with_specs(specs)


def without_cross(spec):
    return replace(spec, params=replace(spec.params, K_wv=0.0, K_vtheta=0.0, K_vomega=0.0))


def random_lossless_operating_point(rng, retune=True):
    """Draw cases until the power flow converges; optionally retune levels."""
    from dpassivity.network import PowerFlowError, operating_point
    while True:
        case = random_lossless_case(rng)
        try:
            op = operating_point(case)
        except PowerFlowError:
            continue
        return retune_levels(op, rng) if retune else op
