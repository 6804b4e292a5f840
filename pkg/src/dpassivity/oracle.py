"""Eigenanalysis ground truth and frequency-domain passivity checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .criteria import StabilityVerdict
from .devices import LinearDevice, Odpm, linearize_device
from .network import OperatingPoint

__all__ = [
    "ClosedLoopModel", "Spectrum", "OracleError", "EIG_TOL", "PR_TOLERANCE",
    "default_freq_grid", "assemble_closed_loop", "closed_loop", "eigen_verdict",
    "verify_odp_frequency",
]

EIG_TOL = 1e-8
PR_TOLERANCE = 1e-8


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClosedLoopModel:
    A_cl: np.ndarray
    slices: dict

    @property
    def n(self) -> int:
        return self.A_cl.shape[0]


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    max_real: float


def default_freq_grid(n: int = 400, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)


def assemble_closed_loop(devices, G_net, bus_ids=None) -> ClosedLoopModel:
    """Small-signal model ``A_dev - B_dev G'_net C_dev``.

    ``devices`` is a sequence of :class:`LinearDevice` in the same bus order
    as the interleaved (unsymmetrized) network matrix ``G_net``.
    """
    G_net = np.asarray(G_net, dtype=float)
    if G_net.shape != (2 * len(devices), 2 * len(devices)):
        raise ValueError(f"network matrix {G_net.shape} does not match "
                         f"{len(devices)} devices")
    A = scipy.linalg.block_diag(*[d.A for d in devices])
    B = scipy.linalg.block_diag(*[d.B for d in devices])
    C = scipy.linalg.block_diag(*[d.C for d in devices])
    slices = {}
    start = 0
    ids = bus_ids if bus_ids is not None else range(1, len(devices) + 1)
    for b, d in zip(ids, devices):
        slices[b] = slice(start, start + d.A.shape[0])
        start += d.A.shape[0]
    return ClosedLoopModel(A - B @ G_net @ C, slices)


def closed_loop(op: OperatingPoint) -> ClosedLoopModel:
    devs = [linearize_device(s, (None, op.refs[b])) for b, s in zip(op.bus_ids, op.specs)]
    return assemble_closed_loop(devs, op.idpm.matrix, op.bus_ids)


def eigen_verdict(model: ClosedLoopModel | np.ndarray, tol: float = EIG_TOL):
    """Spectrum and verdict: stable iff every real part is below ``-tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    A = model.A_cl if isinstance(model, ClosedLoopModel) else np.asarray(model, float)
    if not np.all(np.isfinite(A)):
        raise OracleError("closed-loop matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"eigensolver failed: {exc}") from None
    order = np.lexsort((-ev.imag, -ev.real))
    ev = ev[order]
    max_real = float(ev[0].real)
    if max_real < -tol:
        status = "stable"
    elif max_real > tol:
        status = "unstable"
    else:
        status = "marginal"
    verdict = StabilityVerdict(status == "stable", -max_real, "eigen_oracle",
                               {"max_real": max_real}, status=status)
    return Spectrum(ev, max_real), verdict


def verify_odp_frequency(dev: LinearDevice, odpm: Odpm | np.ndarray, freq_grid=None,
                         tol: float = PR_TOLERANCE):
    """Positive-realness of the output-differential equivalent system.

    Evaluates ``H(jw) = jw G(jw) (I - S G(jw))^{-1}`` with ``G`` the device
    transfer from ``u_dev`` to ``y_dev`` and checks
    ``lambda_min(H + H^*) >= -tol`` on the grid.

    Returns
    -------
    (bool, float, float)
        Whether the check holds, the worst frequency and the worst eigenvalue.
    """
    S = odpm.matrix if isinstance(odpm, Odpm) else np.asarray(odpm, dtype=float)
    w = default_freq_grid() if freq_grid is None else np.asarray(freq_grid, float)
    m = S.shape[0]
    worst_w, worst = float("nan"), np.inf
    for wk in w:
        s = 1j * wk
        try:
            Gs = dev.transfer(s)
        except np.linalg.LinAlgError:
            raise OracleError(f"device pole on the grid at w = {wk:.6g} rad/s") from None
        M = np.eye(m) - S @ Gs
        if np.linalg.cond(M) > 1e14:
            raise OracleError(f"I - S G(jw) singular at w = {wk:.6g} rad/s")
        H = s * Gs @ np.linalg.inv(M)
        lam = float(np.linalg.eigvalsh((H + H.conj().T) / 1.0)[0])
        if lam < worst:
            worst, worst_w = lam, float(wk)
    return bool(worst >= -tol), worst_w, worst
