"""Experiment orchestration: analysis pipeline, parameter sweeps, load-scaling boundaries."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from .case import PowerSystemCase, validate_case
from .criteria import (assemble_sdev, fully_distributed_check, scalar_index,
                       semi_distributed_check)
from .devices import DomainError, with_diagonal_level
from .network import OperatingPoint, PowerFlowError, operating_point
from .oracle import OracleError, closed_loop, eigen_verdict
from .sim import format_number

__all__ = [
    "CODE_OK", "CODE_NOT_CERTIFIED", "CODE_UNSTABLE", "CODE_ERROR",
    "EXIT_VALIDATION", "EXIT_NUMERICAL", "PipelineError", "AnalysisReport",
    "solve_operating_point", "analyze", "apply_levels", "boundary_at", "SweepAxis", "SweepSpec",
    "resolve_path", "apply_edits", "sweep", "write_sweep_csv",
    "BoundarySpec", "BoundaryRow", "scale_load", "with_uniform_level",
    "boundary", "write_boundary_csv",
]

CODE_OK = 1
CODE_NOT_CERTIFIED = 0
CODE_UNSTABLE = -1
CODE_ERROR = 9

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

EQUILIBRIUM_TOL = 1e-6
LEVEL_PSEUDO_FIELDS = ("sigma1", "sigma2")


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``exit_code`` follows the CLI convention."""

    def __init__(self, stage: str, message: str, exit_code: int = EXIT_NUMERICAL):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
        self.exit_code = exit_code


# ---------------------------------------------------------------------------
# analyze


@dataclass
class AnalysisReport:
    op: OperatingPoint
    semi: object
    fully: object
    eigen: object
    spectrum: object

    def to_dict(self) -> dict:
        op = self.op
        return {
            "case": op.case.name,
            "n_bus": op.case.n_bus,
            "dynamic_buses": list(op.bus_ids),
            "power_flow": {"iterations": op.pf.iterations, "residual": op.pf.residual},
            "sigma_net": op.idpm.sigma_net,
            "devices": [
                {"bus_id": b, "device_kind": s.device_kind, "odpm": o.matrix.tolist(),
                 "sigma_dev": scalar_index(o.matrix)}
                for b, s, o in zip(op.bus_ids, op.specs, op.odpms)
            ],
            "verdicts": {"semi_distributed": self.semi.to_dict(),
                         "fully_distributed": self.fully.to_dict(),
                         "eigen_oracle": self.eigen.to_dict()},
            "max_real": self.spectrum.max_real,
        }

    def lines(self) -> list[str]:
        op = self.op
        out = [f"case {op.case.name or '<unnamed>'}: {op.case.n_bus} buses, "
               f"{op.n} dynamic",
               f"power flow: {op.pf.iterations} iterations, residual {op.pf.residual:.3e}",
               f"sigma_net = {op.idpm.sigma_net:.6g}"]
        for b, s, o in zip(op.bus_ids, op.specs, op.odpms):
            m = np.round(o.matrix, 6).tolist()
            out.append(f"bus {b} {s.device_kind}: sigma_dev = "
                       f"{scalar_index(o.matrix):.6g}, odpm = {m}")
        out.append(f"semi-distributed: {self.semi.label()} (margin {self.semi.margin:.6g})")
        out.append(f"fully-distributed: {self.fully.label()} (margin {self.fully.margin:.6g})")
        out.append(f"eigen-oracle: {self.eigen.label()} "
                   f"(max real part {self.spectrum.max_real:.6g})")
        return out


def solve_operating_point(case: PowerSystemCase, **kw) -> OperatingPoint:
    """Validate, solve and reduce, mapping failures to named stages."""
    diags = validate_case(case)
    if diags:
        raise PipelineError("validate", "; ".join(diags), EXIT_VALIDATION)
    try:
        op = operating_point(case, **kw)
    except PowerFlowError as exc:
        raise PipelineError("powerflow", str(exc)) from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineError("kron", str(exc)) from exc
    try:
        resid = op.triplet.residual
    except DomainError as exc:
        raise PipelineError("equilibrium", str(exc)) from exc
    if not resid < EQUILIBRIUM_TOL:
        raise PipelineError("equilibrium", f"device residual {resid:.3e} at the solution")
    return op


def _criteria(op: OperatingPoint):
    for b, o in zip(op.bus_ids, op.odpms):
        if not o.valid:
            raise PipelineError(
                "odpm", f"bus {b}: preconditions violated: "
                + ", ".join(o.violated_conditions), EXIT_VALIDATION)
    idpm = op.idpm
    if not np.isfinite(idpm.sigma_net):
        raise PipelineError("idpm", "network index is not finite")
    semi = semi_distributed_check(assemble_sdev(op.odpms), idpm)
    fully = fully_distributed_check([scalar_index(o.matrix) for o in op.odpms],
                                    idpm.sigma_net)
    return semi, fully


def analyze(case_or_op) -> AnalysisReport:
    """Power flow, reduction, passivity matrices, both criteria and the eigen oracle."""
    op = case_or_op if isinstance(case_or_op, OperatingPoint) else solve_operating_point(case_or_op)
    semi, fully = _criteria(op)
    try:
        spectrum, eig = eigen_verdict(closed_loop(op))
    except OracleError as exc:
        raise PipelineError("oracle", str(exc)) from exc
    return AnalysisReport(op, semi, fully, eig, spectrum)


# ---------------------------------------------------------------------------
# parameter paths


def resolve_path(case: PowerSystemCase, path: str) -> tuple[int, str, str]:
    """Resolve ``devices.<bus>.[params.|setpoints.]<field>``.

    Returns ``(bus, section, field)`` where ``section`` is ``"params"``,
    ``"setpoints"`` or ``"level"``; the bare fields ``sigma1``/``sigma2``
    map to ODPM diagonal levels (retuned gains), except when written as
    ``params.sigma1`` which sets the generator's reported-index override.
    """
    parts = path.split(".")
    if len(parts) not in (3, 4) or parts[0] != "devices":
        raise ValueError(f"parameter path {path!r}: expected devices.<bus>.<field>")
    try:
        bus = int(parts[1])
    except ValueError:
        raise ValueError(f"parameter path {path!r}: {parts[1]!r} is not a bus id") from None
    if bus not in case.devices:
        raise ValueError(f"parameter path {path!r}: no device at bus {bus}")
    spec = case.devices[bus]
    name = parts[-1]
    if len(parts) == 4:
        section = parts[2]
        if section not in ("params", "setpoints"):
            raise ValueError(f"parameter path {path!r}: unknown section {section!r}")
    elif name in LEVEL_PSEUDO_FIELDS:
        return bus, "level", name
    else:
        section = "params" if name in _field_names(spec.params) else "setpoints"
    target = spec.params if section == "params" else spec.setpoints
    if name not in _field_names(target):
        raise ValueError(f"parameter path {path!r}: {spec.device_kind} has no "
                         f"{section} field {name!r}")
    return bus, section, name


def _field_names(obj) -> set[str]:
    return {f.name for f in fields(obj)}


def apply_edits(case: PowerSystemCase, edits) -> tuple[PowerSystemCase, dict]:
    """Apply ``(path, value)`` edits; level edits are returned for after the power flow."""
    devices = dict(case.devices)
    levels: dict[int, dict] = {}
    for path, value in edits:
        bus, section, name = resolve_path(case, path)
        spec = devices[bus]
        if section == "level":
            levels.setdefault(bus, {})[name] = float(value)
        elif section == "params":
            devices[bus] = replace(spec, params=replace(spec.params, **{name: float(value)}))
        else:
            devices[bus] = replace(spec, setpoints=replace(spec.setpoints, **{name: float(value)}))
    return replace(case, devices=devices), levels


def apply_levels(op: OperatingPoint, levels: dict) -> OperatingPoint:
    if not levels:
        return op
    specs = {b: with_diagonal_level(op.case.devices[b], **lv) for b, lv in levels.items()}
    return op.with_specs(specs)


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepAxis:
    path: str
    start: float
    stop: float
    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError(f"axis {self.path}: step count must be at least 2")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)

    @classmethod
    def parse(cls, text: str) -> "SweepAxis":
        """Parse ``PATH:START:STOP:STEPS``."""
        try:
            path, a, b, n = text.rsplit(":", 3)
            return cls(path, float(a), float(b), int(n))
        except ValueError as exc:
            raise ValueError(f"axis {text!r}: expected PATH:START:STOP:STEPS ({exc})") from None


VERDICT_NAMES = ("eigen", "semi", "fully")


@dataclass(frozen=True)
class SweepSpec:
    axis1: SweepAxis
    axis2: SweepAxis
    verdict_set: tuple[str, ...] = VERDICT_NAMES

    def __post_init__(self):
        bad = [v for v in self.verdict_set if v not in VERDICT_NAMES]
        if bad or not self.verdict_set:
            raise ValueError(f"verdict_set must be a non-empty subset of {VERDICT_NAMES}")
        # canonical column order
        object.__setattr__(self, "verdict_set",
                           tuple(v for v in VERDICT_NAMES if v in self.verdict_set))

    def points(self):
        for p1 in self.axis1.values:
            for p2 in self.axis2.values:
                yield float(p1), float(p2)


def _eval_point(case: PowerSystemCase, spec: SweepSpec, p1: float, p2: float) -> tuple:
    codes = {}
    try:
        edited, levels = apply_edits(case, [(spec.axis1.path, p1), (spec.axis2.path, p2)])
        op = apply_levels(operating_point(edited), levels)
    except (PowerFlowError, ValueError, DomainError, np.linalg.LinAlgError):
        return (p1, p2) + (CODE_ERROR,) * len(spec.verdict_set)
    if "eigen" in spec.verdict_set:
        try:
            status = eigen_verdict(closed_loop(op))[1].status
            codes["eigen"] = {"stable": CODE_OK, "marginal": CODE_NOT_CERTIFIED,
                              "unstable": CODE_UNSTABLE}[status]
        except OracleError:
            codes["eigen"] = CODE_ERROR
    valid = all(o.valid for o in op.odpms)
    if "semi" in spec.verdict_set:
        codes["semi"] = (CODE_OK if valid and semi_distributed_check(
            assemble_sdev(op.odpms), op.idpm).certified else CODE_NOT_CERTIFIED)
    if "fully" in spec.verdict_set:
        codes["fully"] = (CODE_OK if valid and fully_distributed_check(
            [scalar_index(o.matrix) for o in op.odpms], op.idpm.sigma_net).certified
            else CODE_NOT_CERTIFIED)
    return (p1, p2) + tuple(codes[v] for v in spec.verdict_set)


def _eval_star(args):
    return _eval_point(*args)


def sweep(case: PowerSystemCase, spec: SweepSpec, workers: int | None = 1) -> list[tuple]:
    """Evaluate the grid in row-major order (axis1 outer).

    Each point re-solves the equilibrium. With ``workers > 1`` points run in
    a process pool; results are collected in input order, so the output
    does not depend on scheduling.
    """
    apply_edits(case, [(spec.axis1.path, spec.axis1.start), (spec.axis2.path, spec.axis2.start)])
    tasks = [(case, spec, p1, p2) for p1, p2 in spec.points()]
    if workers is None or workers <= 1:
        return [_eval_star(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_eval_star, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_sweep_csv(spec: SweepSpec, rows, out=None) -> str:
    text = _csv_text(["p1", "p2", *spec.verdict_set],
                     [[format_number(r[0]), format_number(r[1]), *map(str, r[2:])] for r in rows])
    _write(out, text)
    return text


def _write(out, text):
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# boundary


@dataclass(frozen=True)
class BoundarySpec:
    s_min: float = 0.8
    s_max: float = 1.2
    samples: int = 5
    tol: float = 1e-4
    max_iter: int = 40
    level_lo: float = 1e-3
    level_hi: float = 10.0
    level_cap: float = 1e4

    def __post_init__(self):
        if not self.s_min > 0:
            raise ValueError("s_min must be positive")
        if self.s_max < self.s_min:
            raise ValueError("s_max must be at least s_min")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if not 0 < self.level_lo < self.level_hi:
            raise ValueError("level bracket must satisfy 0 < level_lo < level_hi")

    @property
    def scales(self) -> np.ndarray:
        if self.samples == 1:
            return np.array([self.s_min])
        return np.linspace(self.s_min, self.s_max, self.samples)


@dataclass(frozen=True)
class BoundaryRow:
    s: float
    level_semi: float
    level_eigen: float
    note: str = ""


def scale_load(case: PowerSystemCase, s: float) -> PowerSystemCase:
    """Scale every bus load and every device active-power setpoint by ``s``."""
    buses = tuple(replace(b, P_load=b.P_load * s, Q_load=b.Q_load * s) for b in case.buses)
    devices = {k: replace(d, setpoints=replace(d.setpoints, P_star=d.setpoints.P_star * s))
               for k, d in case.devices.items()}
    return replace(case, buses=buses, devices=devices)


def with_uniform_level(op: OperatingPoint, level: float) -> OperatingPoint:
    """Retune every device so both ODPM diagonal entries equal ``level``."""
    return op.with_specs({b: with_diagonal_level(op.case.devices[b], level, level)
                          for b in op.bus_ids})


def _min_level(pred: Callable[[float], bool], lo: float, hi: float, cap: float,
               tol: float, max_iter: int) -> float:
    """Smallest level in ``[lo, cap]`` where ``pred`` holds, assuming a single crossing."""
    if pred(lo):
        return lo
    while not pred(hi):
        lo, hi = hi, 2.0 * hi
        if hi > cap:
            raise ValueError(f"no level up to {cap:g} satisfies the criterion")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _droop_floor(op: OperatingPoint) -> float:
    # the CD voltage level must exceed Q*/V*^2
    floor = 0.0
    for s in op.specs:
        if s.device_kind == "CD":
            floor = max(floor, s.setpoints.Q_star / s.setpoints.V_star ** 2)
    return floor


def boundary_at(case: PowerSystemCase, spec: BoundarySpec, s: float) -> BoundaryRow:
    try:
        op = operating_point(scale_load(case, s))
    except (PowerFlowError, ValueError, np.linalg.LinAlgError) as exc:
        return BoundaryRow(s, float("nan"), float("nan"), f"powerflow: {exc}")
    lo = max(spec.level_lo, _droop_floor(op) + spec.tol)
    hi = max(spec.level_hi, 2 * lo)

    def semi(level):
        lop = with_uniform_level(op, level)
        return (all(o.valid for o in lop.odpms)
                and semi_distributed_check(assemble_sdev(lop.odpms), lop.idpm).certified)

    def stable(level):
        return eigen_verdict(closed_loop(with_uniform_level(op, level)))[1].status == "stable"

    notes = []
    levels = []
    for name, pred in (("semi", semi), ("eigen", stable)):
        try:
            levels.append(_min_level(pred, lo, hi, spec.level_cap, spec.tol, spec.max_iter))
        except (ValueError, OracleError) as exc:
            levels.append(float("nan"))
            notes.append(f"{name} bracket: {exc}")
    return BoundaryRow(s, levels[0], levels[1], "; ".join(notes))


def boundary(case: PowerSystemCase, spec: BoundarySpec, workers: int | None = 1,
             scales=None) -> list[BoundaryRow]:
    """Minimal uniform ODPM level certified by the semi criterion vs the oracle, per load scale."""
    scales = spec.scales if scales is None else np.asarray(scales, dtype=float)
    tasks = [float(s) for s in scales]
    if workers is None or workers <= 1:
        return [boundary_at(case, spec, s) for s in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(boundary_at, [case] * len(tasks), [spec] * len(tasks), tasks))


def write_boundary_csv(rows, out=None) -> str:
    text = _csv_text(["s", "level_semi", "level_eigen", "note"],
                     [[format_number(r.s), format_number(r.level_semi),
                       format_number(r.level_eigen), r.note] for r in rows])
    _write(out, text)
    return text

