"""Grid case description, file ingestion and structural validation.

Two on-disk formats are understood:

native
    UTF-8 JSON with top-level keys ``base_mva``, ``buses``, ``lines`` and
    ``devices``. Quantities are per-unit on ``base_mva``; angles are radians
    unless the document carries ``"angle_unit": "deg"``.
matpower
    Plain-text MATPOWER case (``mpc.bus``, ``mpc.branch``, ``mpc.gen``
    blocks). Dynamic devices are attached from a separate JSON assignment
    file mapping bus id to a device description.

Missing ``K_p`` / ``K_E`` gains of a synchronous generator default to zero.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

__all__ = [
    "BusRecord", "LineRecord", "SgParams", "CdParams", "QdParams",
    "Setpoints", "DeviceSpec", "PowerSystemCase", "EquilibriumTriplet",
    "CaseParseError", "CaseValidationError", "load_case", "validate_case",
    "case_to_dict", "case_from_dict", "dump_case", "parse_matpower",
    "load_device_assignment", "DATA_DIR", "fixture_path",
]

DATA_DIR = Path(__file__).parent / "data"

DEVICE_KINDS = ("SG", "CD", "QD")


class CaseParseError(ValueError):
    """Raised when a case file cannot be parsed; message carries location."""


class CaseValidationError(ValueError):
    """Raised when a parsed case violates a structural invariant."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class BusRecord:
    id: int
    bus_kind: str
    V_setpoint: float = 1.0
    theta_setpoint: float = 0.0
    P_load: float = 0.0
    Q_load: float = 0.0
    G_shunt: float = 0.0
    B_shunt: float = 0.0


@dataclass(frozen=True)
class LineRecord:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    tap: float = 1.0


@dataclass(frozen=True)
class SgParams:
    M: float
    D: float
    T_d: float
    x_d: float
    x_dp: float
    K_I: float
    K_p: float = 0.0
    K_E: float = 0.0
    K_wv: float = 0.0
    K_vtheta: float = 0.0
    K_vomega: float = 0.0
    # optional explicit ODPM diagonal choice; None selects bound - margin
    sigma1: float | None = None
    sigma2: float | None = None


@dataclass(frozen=True)
class CdParams:
    tau1: float
    tau2: float
    D1: float
    D2: float
    K_wv: float = 0.0
    K_vtheta: float = 0.0
    K_vomega: float = 0.0


@dataclass(frozen=True)
class QdParams:
    tau1: float
    tau2: float
    D1: float
    D2: float
    K_wv: float = 0.0
    K_vtheta: float = 0.0
    K_vomega: float = 0.0


PARAM_TYPES = {"SG": SgParams, "CD": CdParams, "QD": QdParams}


@dataclass(frozen=True)
class Setpoints:
    P_star: float = 0.0
    Q_star: float = 0.0
    theta_star: float = 0.0
    V_star: float = 1.0


@dataclass(frozen=True)
class DeviceSpec:
    device_kind: str
    params: SgParams | CdParams | QdParams
    setpoints: Setpoints = field(default_factory=Setpoints)

    @property
    def has_cross_control(self) -> bool:
        p = self.params
        return bool(p.K_wv or p.K_vtheta or p.K_vomega)


@dataclass(frozen=True)
class PowerSystemCase:
    base_mva: float
    buses: tuple[BusRecord, ...]
    lines: tuple[LineRecord, ...]
    devices: Mapping[int, DeviceSpec]
    name: str = ""
    note: str = ""
    slack_bus: int | None = None

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def dynamic_ids(self) -> list[int]:
        return [b.id for b in self.buses if b.bus_kind == "dynamic"]

    @property
    def slack(self) -> int:
        if self.slack_bus is not None:
            return self.slack_bus
        return self.dynamic_ids[0]

    def bus(self, bus_id: int) -> BusRecord:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def with_device(self, bus_id: int, spec: DeviceSpec) -> "PowerSystemCase":
        devices = dict(self.devices)
        devices[bus_id] = spec
        return replace(self, devices=devices)


@dataclass(frozen=True)
class EquilibriumTriplet:
    """Device state, input and output vectors that jointly balance the grid.

    ``x_star`` stacks device states in dynamic-bus order; ``u_dev_star`` is
    ``-(P_1, Q_1/V_1, ...)`` and ``y_dev_star`` is ``(theta_1, V_1, ...)``.
    ``refs`` holds per-bus reference inputs (``Pg_star``/``Ef_star`` for a
    generator, ``u_star`` for a quadratic-droop inverter).
    """

    x_star: np.ndarray
    u_dev_star: np.ndarray
    y_dev_star: np.ndarray
    refs: Mapping[int, Mapping[str, float]]
    residual: float


# ---------------------------------------------------------------------------
# validation


def _graph_connected(ids, lines) -> bool:
    if not ids:
        return False
    adj = {i: set() for i in ids}
    for ln in lines:
        if ln.from_bus in adj and ln.to_bus in adj:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(ids)


def _device_diagnostics(bus_id: int, spec: DeviceSpec) -> list[str]:
    out = []
    kind = spec.device_kind
    if kind not in DEVICE_KINDS:
        return [f"device at bus {bus_id}: unknown device_kind {kind!r}"]
    if not isinstance(spec.params, PARAM_TYPES[kind]):
        out.append(f"device at bus {bus_id}: device_kind {kind} does not match "
                   f"{type(spec.params).__name__}")
        return out
    p = spec.params
    if kind == "SG":
        for name in ("M", "D", "T_d"):
            if not getattr(p, name) > 0:
                out.append(f"device at bus {bus_id} (SG): requires {name} > 0")
    else:
        for name in ("tau1", "tau2", "D1", "D2"):
            if not getattr(p, name) > 0:
                out.append(f"device at bus {bus_id} ({kind}): droop inverter "
                           f"precondition {name} > 0 violated "
                           "(D1, D2, tau1, tau2 > 0)")
    for name, v in asdict(p).items():
        if v is not None and not math.isfinite(v):
            out.append(f"device at bus {bus_id}: parameter {name} not finite")
    for name, v in asdict(spec.setpoints).items():
        if not math.isfinite(v):
            out.append(f"device at bus {bus_id}: setpoint {name} not finite")
    return out


def validate_case(case: PowerSystemCase) -> list[str]:
    """Return structural diagnostics; an empty list means the case is valid."""
    diags: list[str] = []
    ids = [b.id for b in case.buses]
    seen = set()
    for i in ids:
        if i in seen:
            diags.append(f"duplicate bus id {i}")
        seen.add(i)
    if sorted(seen) != list(range(1, len(seen) + 1)):
        diags.append("bus ids not contiguous from 1")
    if not case.base_mva > 0:
        diags.append("base_mva must be positive")
    for b in case.buses:
        if b.bus_kind not in ("dynamic", "passive"):
            diags.append(f"bus {b.id}: unknown bus_kind {b.bus_kind!r}")
        if not b.V_setpoint > 0:
            diags.append(f"bus {b.id}: V_setpoint must be > 0")
        if b.bus_kind == "dynamic" and b.id not in case.devices:
            diags.append(f"bus {b.id}: dynamic bus without device")
        if b.bus_kind == "passive" and b.id in case.devices:
            diags.append(f"bus {b.id}: passive bus carries a device")
    for bus_id in case.devices:
        if bus_id not in seen:
            diags.append(f"device references unknown bus {bus_id}")
    if not any(b.bus_kind == "dynamic" for b in case.buses):
        diags.append("no dynamic bus")
    if case.slack_bus is not None and case.slack_bus not in case.devices:
        diags.append(f"slack bus {case.slack_bus} is not a dynamic bus")
    for k, ln in enumerate(case.lines):
        if ln.from_bus == ln.to_bus:
            diags.append(f"line {k}: from_bus == to_bus")
        if ln.x == 0:
            diags.append(f"line {k}: zero reactance")
        if ln.from_bus not in seen or ln.to_bus not in seen:
            diags.append(f"line {k}: unknown terminal bus")
        if not ln.tap > 0:
            diags.append(f"line {k}: tap ratio must be > 0")
    if ids and not _graph_connected(sorted(seen), case.lines):
        diags.append("graph not connected")
    for bus_id in sorted(case.devices):
        diags.extend(_device_diagnostics(bus_id, case.devices[bus_id]))
    return diags


# ---------------------------------------------------------------------------
# native JSON


def _take(d: Mapping, key: str, where: str, default=...):
    if key in d:
        v = d[key]
    elif default is not ...:
        return default
    else:
        raise CaseParseError(f"{where}: missing field {key!r}")
    return v


def _num(d: Mapping, key: str, where: str, default=...) -> float:
    v = _take(d, key, where, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseParseError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _dataclass_from(cls, d: Mapping, where: str):
    if not isinstance(d, Mapping):
        raise CaseParseError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    kw = {}
    for k in d:
        if k not in known:
            raise CaseParseError(f"{where}: unknown field {k!r}")
        kw[k] = _num(d, k, where)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise CaseParseError(f"{where}: {exc}") from None


def device_from_dict(d: Mapping, where: str, angle_scale: float = 1.0) -> DeviceSpec:
    kind = _take(d, "device_kind", where)
    if kind not in PARAM_TYPES:
        raise CaseParseError(f"{where}.device_kind: unknown kind {kind!r}")
    params = _dataclass_from(PARAM_TYPES[kind], _take(d, "params", where),
                             f"{where}.params")
    sp = _take(d, "setpoints", where, {})
    sp = _dataclass_from(Setpoints, sp, f"{where}.setpoints")
    sp = replace(sp, theta_star=sp.theta_star * angle_scale)
    return DeviceSpec(kind, params, sp)


def case_from_dict(doc: Mapping) -> PowerSystemCase:
    """Build a case from a parsed native document (no validation)."""
    if not isinstance(doc, Mapping):
        raise CaseParseError("document root must be an object")
    unit = doc.get("angle_unit", "rad")
    if unit not in ("rad", "deg"):
        raise CaseParseError(f"angle_unit: expected 'rad' or 'deg', got {unit!r}")
    ascale = math.pi / 180.0 if unit == "deg" else 1.0
    buses = []
    for k, b in enumerate(_take(doc, "buses", "root")):
        where = f"buses[{k}]"
        if not isinstance(b, Mapping):
            raise CaseParseError(f"{where}: expected an object")
        idv = _take(b, "id", where)
        if isinstance(idv, bool) or not isinstance(idv, int):
            raise CaseParseError(f"{where}.id: expected an integer")
        buses.append(BusRecord(
            id=idv,
            bus_kind=_take(b, "bus_kind", where),
            V_setpoint=_num(b, "V_setpoint", where, 1.0),
            theta_setpoint=_num(b, "theta_setpoint", where, 0.0) * ascale,
            P_load=_num(b, "P_load", where, 0.0),
            Q_load=_num(b, "Q_load", where, 0.0),
            G_shunt=_num(b, "G_shunt", where, 0.0),
            B_shunt=_num(b, "B_shunt", where, 0.0),
        ))
    lines = []
    for k, ln in enumerate(_take(doc, "lines", "root")):
        where = f"lines[{k}]"
        lines.append(LineRecord(
            from_bus=int(_num(ln, "from_bus", where)),
            to_bus=int(_num(ln, "to_bus", where)),
            r=_num(ln, "r", where),
            x=_num(ln, "x", where),
            b_shunt=_num(ln, "b_shunt", where, 0.0),
            tap=_num(ln, "tap", where, 1.0),
        ))
    devices = {}
    raw_dev = _take(doc, "devices", "root")
    if not isinstance(raw_dev, Mapping):
        raise CaseParseError("devices: expected an object keyed by bus id")
    for key, d in raw_dev.items():
        try:
            bus_id = int(key)
        except ValueError:
            raise CaseParseError(f"devices: key {key!r} is not a bus id") from None
        devices[bus_id] = device_from_dict(d, f"devices[{key}]", ascale)
    slack = doc.get("slack_bus")
    return PowerSystemCase(
        base_mva=_num(doc, "base_mva", "root"),
        buses=tuple(sorted(buses, key=lambda b: b.id)),
        lines=tuple(lines),
        devices=devices,
        name=str(doc.get("name", "")),
        note=str(doc.get("note", "")),
        slack_bus=None if slack is None else int(slack),
    )


def case_to_dict(case: PowerSystemCase) -> dict[str, Any]:
    """Serialize to the native document layout (angles in radians)."""

    def params_dict(p):
        return {k: v for k, v in asdict(p).items() if v is not None}

    doc: dict[str, Any] = {}
    if case.name:
        doc["name"] = case.name
    if case.note:
        doc["note"] = case.note
    doc["base_mva"] = case.base_mva
    if case.slack_bus is not None:
        doc["slack_bus"] = case.slack_bus
    doc["buses"] = [asdict(b) for b in case.buses]
    doc["lines"] = [asdict(ln) for ln in case.lines]
    doc["devices"] = {
        str(k): {"device_kind": d.device_kind, "params": params_dict(d.params),
                 "setpoints": asdict(d.setpoints)}
        for k, d in sorted(case.devices.items())
    }
    return doc


def dump_case(case: PowerSystemCase, path=None) -> str:
    text = json.dumps(case_to_dict(case), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def _read_json(path) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


# ---------------------------------------------------------------------------
# MATPOWER


_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def parse_matpower(text: str, source: str = "<matpower>") -> dict[str, np.ndarray | float]:
    """Extract ``baseMVA`` and the numeric matrix blocks of a MATPOWER case."""
    cleaned = "\n".join(line.split("%", 1)[0] for line in text.splitlines())
    m = _SCALAR_RE.search(cleaned)
    if m is None:
        raise CaseParseError(f"{source}: mpc.baseMVA not found")
    out: dict[str, Any] = {"baseMVA": float(m.group(1))}
    for bm in _BLOCK_RE.finditer(cleaned):
        name, body = bm.group(1), bm.group(2)
        line0 = cleaned.count("\n", 0, bm.start(2)) + 1
        rows = []
        for li, line in enumerate(body.split("\n")):
            for raw in line.split(";"):
                toks = raw.replace(",", " ").split()
                if not toks:
                    continue
                try:
                    rows.append([float(t) for t in toks])
                except ValueError:
                    raise CaseParseError(
                        f"{source}:{line0 + li}: mpc.{name}: non-numeric entry in "
                        f"{raw.strip()!r}") from None
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise CaseParseError(f"{source}:{line0}: mpc.{name}: ragged rows")
        out[name] = np.array(rows, dtype=float)
    for need in ("bus", "branch", "gen"):
        if need not in out:
            raise CaseParseError(f"{source}: block mpc.{need} not found")
    return out


def load_device_assignment(path) -> dict[int, dict]:
    """Read a JSON map bus-id -> raw device description."""
    doc = _read_json(path)
    if not isinstance(doc, Mapping):
        raise CaseParseError(f"{path}: expected an object keyed by bus id")
    return {int(k): v for k, v in doc.items() if not k.startswith("_")}


def _case_from_matpower(mpc: Mapping, assignment: Mapping[int, Mapping] | None,
                        source: str) -> PowerSystemCase:
    base = mpc["baseMVA"]
    bus = mpc["bus"]
    gen = mpc["gen"]
    branch = mpc["branch"]
    deg = math.pi / 180.0
    ext_ids = [int(r[0]) for r in bus]
    remap = {e: k + 1 for k, e in enumerate(ext_ids)}
    assignment = dict(assignment or {})
    for bid in assignment:
        if bid not in remap:
            raise CaseParseError(f"{source}: device assigned to unknown bus {bid}")

    pg = {}
    vg = {}
    for r in gen:
        if len(r) > 7 and r[7] <= 0:
            continue
        b = int(r[0])
        pg[b] = pg.get(b, 0.0) + r[1] / base
        vg[b] = r[5]

    buses = []
    ref_bus = None
    for r in bus:
        e = int(r[0])
        dynamic = e in assignment
        if int(r[1]) == 3 and dynamic:
            ref_bus = remap[e]
        v_set = vg.get(e, r[7]) if dynamic else r[7]
        buses.append(BusRecord(
            id=remap[e], bus_kind="dynamic" if dynamic else "passive",
            V_setpoint=float(v_set), theta_setpoint=float(r[8]) * deg,
            P_load=float(r[2]) / base, Q_load=float(r[3]) / base,
            G_shunt=float(r[4]) / base, B_shunt=float(r[5]) / base,
        ))
    lines = []
    for r in branch:
        if len(r) > 10 and r[10] <= 0:
            continue
        tap = float(r[8]) if len(r) > 8 and r[8] != 0 else 1.0
        lines.append(LineRecord(remap[int(r[0])], remap[int(r[1])],
                                float(r[2]), float(r[3]), float(r[4]), tap))
    devices = {}
    for e, raw in assignment.items():
        where = f"devices[{e}]"
        spec = device_from_dict(raw, where)
        if "setpoints" not in raw:
            spec = replace(spec, setpoints=Setpoints(
                P_star=pg.get(e, 0.0), Q_star=0.0,
                theta_star=float(bus[ext_ids.index(e)][8]) * deg,
                V_star=float(vg.get(e, bus[ext_ids.index(e)][7]))))
        devices[remap[e]] = spec
    return PowerSystemCase(base_mva=base, buses=tuple(buses), lines=tuple(lines),
                           devices=devices, name=Path(source).stem,
                           slack_bus=ref_bus)


# ---------------------------------------------------------------------------
# entry point


def load_case(path, format: str = "native", devices=None) -> PowerSystemCase:
    """Load and validate a case file.

    Parameters
    ----------
    path : path-like
        Case file.
    format : {"native", "matpower"}
        File format.
    devices : path-like, optional
        Device-assignment JSON (bus id -> device description). Required for
        MATPOWER input; for native input it overrides/extends ``devices``.

    Raises
    ------
    CaseParseError
        The file does not parse; the message names the line or field.
    CaseValidationError
        The parsed case violates an invariant (see :func:`validate_case`).
    """
    path = Path(path)
    if not path.exists():
        raise CaseParseError(f"{path}: no such file")
    if format == "native":
        case = case_from_dict(_read_json(path))
        if devices is not None:
            extra = {k: device_from_dict(v, f"devices[{k}]")
                     for k, v in load_device_assignment(devices).items()}
            merged = dict(case.devices)
            merged.update(extra)
            buses = tuple(replace(b, bus_kind="dynamic") if b.id in extra else b
                          for b in case.buses)
            case = replace(case, devices=merged, buses=buses)
    elif format == "matpower":
        mpc = parse_matpower(path.read_text(encoding="utf-8"), str(path))
        assignment = load_device_assignment(devices) if devices is not None else {}
        case = _case_from_matpower(mpc, assignment, str(path))
    else:
        raise ValueError(f"unknown case format {format!r}")
    diags = validate_case(case)
    if diags:
        raise CaseValidationError(diags)
    return case


def fixture_path(name: str) -> Path:
    """Path of a bundled data file (``three_bus_lossless.json``, ``case118.m``...)."""
    return DATA_DIR / name
