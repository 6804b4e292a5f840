"""Network kernels with a compiled core and a numpy fallback.

The backend is chosen once at import: the Cython extension ``_ckernels`` if
it was built, otherwise :mod:`._pure`. Setting ``DPASSIVITY_PURE_PYTHON=1``
forces the fallback. ``BACKEND`` names the active choice.
"""

import os

import numpy as np

from . import _pure

BACKEND = "python"
_impl = _pure
if os.environ.get("DPASSIVITY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _pure


def _prep(G, B, theta, V):
    return (np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(B, dtype=float),
            np.ascontiguousarray(theta, dtype=float), np.ascontiguousarray(V, dtype=float))


def power_injections(G, B, theta, V):
    """Net injections ``(P, Q)`` of the polar power-flow equations."""
    return _impl.power_injections(*_prep(G, B, theta, V))


def jacobian_blocks(G, B, theta, V):
    """Blocks ``(A, D, E, C)`` of the Jacobian of ``(P, Q/V)`` w.r.t. ``(theta, V)``."""
    return _impl.jacobian_blocks(*_prep(G, B, theta, V))


__all__ = ["BACKEND", "power_injections", "jacobian_blocks"]
