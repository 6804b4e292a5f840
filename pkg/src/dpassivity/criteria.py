"""Semi-distributed and fully distributed stability criteria.

Both criteria act on symmetric parts. A criterion either certifies stability
or reports ``not certified``; it never claims instability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.linalg

from .devices import Odpm, symmetric_part
from .network import Idpm, OperatingPoint, operating_point

__all__ = [
    "PD_TOLERANCE", "StabilityVerdict", "DeviceReport", "AssessmentReport",
    "AssessmentError", "assemble_sdev", "semi_distributed_check",
    "fully_distributed_check", "scalar_index", "run_two_level_assessment",
]

PD_TOLERANCE = 1e-9


class AssessmentError(RuntimeError):
    """A device or the network could not supply its passivity matrix."""

    def __init__(self, message, bus=None):
        super().__init__(message)
        self.bus = bus


@dataclass
class StabilityVerdict:
    certified: bool
    margin: float
    criterion: str
    details: dict = field(default_factory=dict)
    # eigen_oracle only: "stable" | "marginal" | "unstable"
    status: str = ""

    def label(self) -> str:
        if self.criterion == "eigen_oracle":
            return self.status
        return "certified" if self.certified else "not-certified"

    def to_dict(self) -> dict[str, Any]:
        return {"criterion": self.criterion, "certified": self.certified,
                "margin": self.margin, "status": self.label(),
                "details": _jsonable(self.details)}


@dataclass
class DeviceReport:
    bus_id: int
    odpm: Odpm
    scalar_index: float

    def to_dict(self):
        return {"bus_id": self.bus_id, "device_odpm": self.odpm.matrix.tolist(),
                "valid": self.odpm.valid,
                "violated_conditions": list(self.odpm.violated_conditions),
                "scalar_index": self.scalar_index}


@dataclass
class AssessmentReport:
    mode: str
    device_reports: list[DeviceReport]
    network_index: float
    verdict: StabilityVerdict
    message_log: list[dict]
    network_matrix: np.ndarray | None = None

    def to_dict(self):
        return {"mode": self.mode,
                "device_reports": [d.to_dict() for d in self.device_reports],
                "network_index": self.network_index,
                "verdict": self.verdict.to_dict(),
                "message_log": _jsonable(self.message_log)}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def scalar_index(M) -> float:
    """Smallest eigenvalue of the symmetric part of ``M``."""
    return float(np.linalg.eigvalsh(symmetric_part(M))[0])


def assemble_sdev(odpms: Sequence[Odpm | np.ndarray]) -> np.ndarray:
    """Block-diagonal stack of the per-bus 2x2 matrices, in bus order."""
    blocks = [o.matrix if isinstance(o, Odpm) else np.asarray(o, float) for o in odpms]
    if not blocks:
        raise ValueError("no device matrices given")
    return scipy.linalg.block_diag(*blocks)


def semi_distributed_check(S_dev, S_net, tol: float = PD_TOLERANCE) -> StabilityVerdict:
    """Certify when ``sym(S_net) + sym(S_dev)`` is positive definite."""
    S_dev = np.asarray(S_dev, dtype=float)
    net = S_net.matrix if isinstance(S_net, Idpm) else np.asarray(S_net, dtype=float)
    if S_dev.shape != net.shape:
        raise ValueError(f"dimension mismatch: S_dev {S_dev.shape} vs S_net {net.shape}")
    margin = float(np.linalg.eigvalsh(symmetric_part(net) + symmetric_part(S_dev))[0])
    return StabilityVerdict(margin > tol, margin, "semi_distributed")


def fully_distributed_check(device_indices: Sequence[float], sigma_net: float,
                            tol: float = PD_TOLERANCE) -> StabilityVerdict:
    """Certify when ``min_i sigma_dev_i + sigma_net > 0``."""
    idx = [float(v) for v in device_indices]
    if not idx:
        raise ValueError("fully_distributed_check needs at least one device index")
    margin = min(idx) + float(sigma_net)
    per = [v + float(sigma_net) for v in idx]
    return StabilityVerdict(margin > tol, margin, "fully_distributed",
                            {"per_device_margin": per})


def _device_level(op: OperatingPoint):
    reports = []
    for b, odpm in zip(op.bus_ids, op.odpms):
        if not odpm.valid:
            raise AssessmentError(
                f"bus {b}: passivity matrix preconditions violated: "
                + ", ".join(odpm.violated_conditions), bus=b)
        reports.append(DeviceReport(b, odpm, scalar_index(odpm.matrix)))
    return reports


def run_two_level_assessment(case_or_op, mode: str = "semi") -> AssessmentReport:
    """Simulate the device-level / control-center exchange.

    In ``semi`` mode every device reports its 2x2 matrix and the center
    checks the aggregate. In ``fully`` mode the center broadcasts only the
    scalar network index and each device answers with its local scalar
    margin; the system is certified when all devices pass.
    """
    if mode not in ("semi", "fully"):
        raise ValueError(f"mode must be 'semi' or 'fully', got {mode!r}")
    op = case_or_op if isinstance(case_or_op, OperatingPoint) else operating_point(case_or_op)
    reports = _device_level(op)
    idpm = op.idpm
    log: list[dict] = []
    if mode == "semi":
        for r in reports:
            log.append({"from": f"device:{r.bus_id}", "to": "center",
                        "kind": "odpm", "payload": r.odpm.matrix.tolist()})
        verdict = semi_distributed_check(assemble_sdev([r.odpm for r in reports]), idpm)
        verdict.details = {"sigma_net": idpm.sigma_net}
    else:
        log.append({"from": "center", "to": "broadcast", "kind": "sigma_net",
                    "payload": idpm.sigma_net})
        passes = {}
        for r in reports:
            local = r.scalar_index + idpm.sigma_net
            passes[r.bus_id] = local > PD_TOLERANCE
            log.append({"from": f"device:{r.bus_id}", "to": "center",
                        "kind": "local_margin", "payload": local})
        verdict = fully_distributed_check([r.scalar_index for r in reports], idpm.sigma_net)
        verdict.details = {"device_pass": passes, "sigma_net": idpm.sigma_net}
        assert verdict.certified == all(passes.values())
    return AssessmentReport(mode, reports, idpm.sigma_net, verdict, log,
                            idpm.matrix if mode == "semi" else None)
