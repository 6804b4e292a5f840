"""Vectorized numpy versions of the network kernels.

Used when the compiled extension is unavailable, or when
``DPASSIVITY_PURE_PYTHON=1`` is set.
"""

import numpy as np


def _angles(theta):
    t = theta[:, None] - theta[None, :]
    return np.cos(t), np.sin(t)


def power_injections(G, B, theta, V):
    c, s = _angles(theta)
    P = V * ((G * c + B * s) @ V)
    Q = V * ((G * s - B * c) @ V)
    return P, Q


def jacobian_blocks(G, B, theta, V):
    """Jacobian of (P, Q/V) with respect to (theta, V), lossy formulas.

    Returns ``(A, D, E, C)`` with ``A = dP/dtheta``, ``D = dP/dV``,
    ``E = d(Q/V)/dtheta`` and ``C = d(Q/V)/dV``.
    """
    n = theta.shape[0]
    c, s = _angles(theta)
    off = ~np.eye(n, dtype=bool)
    bs_gc = (B * s + G * c) * off
    a_off = np.outer(V, V) * (G * s - B * c) * off
    A = a_off - np.diag(a_off.sum(axis=1))
    D = V[:, None] * bs_gc + np.diag(2.0 * np.diag(G) * V + bs_gc @ V)
    E = -bs_gc * V[None, :] + np.diag(bs_gc @ V)
    C = (G * s - B * c) * off - np.diag(np.diag(B))
    return A, D, E, C
