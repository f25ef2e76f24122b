"""Network cases: MATPOWER parsing, JSON round-trip and the bus admittance matrix.

Injections are stored in per-unit on the case MVA base with the generation-positive
sign convention, so a load of 50 MW on a 100 MVA base is ``p_inject = -0.5``.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class CaseError(ValueError):
    """Base class for problems with a network case."""


class ParseError(CaseError):
    """The case text could not be read."""


class ValidationError(CaseError):
    """The case text was read but does not describe a supported network."""


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_inject: float = 0.0
    q_inject: float = 0.0
    v_setpoint: float = 1.0
    v0_angle: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series_z: complex
    charging_b: float = 0.0
    tap: complex = 1.0 + 0.0j
    in_service: bool = True


def build_ybus(buses, branches) -> sp.csr_matrix:
    """Assemble the complex bus admittance matrix (pi branch model, MATPOWER convention).

    Off-nominal taps sit on the from side: ``Yff = (ys + jb/2)/|t|^2``,
    ``Yft = -ys/conj(t)``, ``Ytf = -ys/t``, ``Ytt = ys + jb/2``.
    """
    index = {b.id: k for k, b in enumerate(buses)}
    n = len(buses)
    rows, cols, vals = [], [], []
    for br in branches:
        if not br.in_service:
            continue
        if br.series_z == 0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus} has zero series impedance")
        f, t = index[br.from_bus], index[br.to_bus]
        ys = 1.0 / br.series_z
        ytt = ys + 0.5j * br.charging_b
        tap = complex(br.tap)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [ytt / (tap * tap.conjugate()), -ys / tap.conjugate(), -ys / tap, ytt]
    for k, b in enumerate(buses):
        if b.shunt_g or b.shunt_b:
            rows.append(k)
            cols.append(k)
            vals.append(complex(b.shunt_g, b.shunt_b))
    # duplicate (row, col) entries are summed by the COO -> CSR conversion
    return sp.coo_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Immutable indexed network.

    ``scale`` multiplies every complex injection (PV voltage setpoints are untouched);
    it is kept separate from the stored bus data so repeated scaling composes exactly.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    scale: float = 1.0
    name: str = ""
    ybus: sp.csr_matrix = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        validate(self.buses, self.branches)
        if self.ybus is None:
            object.__setattr__(self, "ybus", build_ybus(self.buses, self.branches))

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return (
            self.buses == other.buses
            and self.branches == other.branches
            and self.base_mva == other.base_mva
            and self.scale == other.scale
        )

    __hash__ = None

    # index helpers -----------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> np.ndarray:
        return np.array([b.id for b in self.buses])

    def index_of(self, bus_id: int) -> int:
        for k, b in enumerate(self.buses):
            if b.id == bus_id:
                return k
        raise KeyError(f"no bus {bus_id}")

    def _where(self, kind: BusKind) -> np.ndarray:
        return np.array([k for k, b in enumerate(self.buses) if b.kind is kind], dtype=int)

    @property
    def slack(self) -> int:
        return int(self._where(BusKind.SLACK)[0])

    @property
    def pv(self) -> np.ndarray:
        return self._where(BusKind.PV)

    @property
    def pq(self) -> np.ndarray:
        return self._where(BusKind.PQ)

    @property
    def kinds(self) -> list[BusKind]:
        return [b.kind for b in self.buses]

    # injections --------------------------------------------------------
    @property
    def s_inject(self) -> np.ndarray:
        """Scaled complex injections, per-unit."""
        return self.scale * np.array([complex(b.p_inject, b.q_inject) for b in self.buses])

    @property
    def v_set(self) -> np.ndarray:
        return np.array([b.v_setpoint for b in self.buses])

    @property
    def v_slack(self) -> complex:
        b = self.buses[self.slack]
        return b.v_setpoint * np.exp(1j * b.v0_angle)

    def with_buses(self, buses) -> NetworkModel:
        """Copy with new bus data; the admittance matrix is rebuilt only if shunts moved."""
        buses = tuple(buses)
        same_y = [(b.id, b.shunt_g, b.shunt_b) for b in buses] == [
            (b.id, b.shunt_g, b.shunt_b) for b in self.buses
        ]
        return dataclasses.replace(self, buses=buses, ybus=self.ybus if same_y else None)


def validate(buses, branches) -> None:
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate bus ids: {dup}")
    slacks = [b.id for b in buses if b.kind is BusKind.SLACK]
    if not slacks:
        raise ValidationError("no slack bus")
    if len(slacks) > 1:
        raise ValidationError(f"more than one slack bus: {slacks}")
    known = set(ids)
    adj = {i: [] for i in ids}
    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise ValidationError(f"branch references unknown bus {end}")
        if br.in_service:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    seen = {slacks[0]}
    todo = deque(seen)
    while todo:
        for nb in adj[todo.popleft()]:
            if nb not in seen:
                seen.add(nb)
                todo.append(nb)
    if len(seen) != len(ids):
        raise ValidationError(f"disconnected buses: {sorted(known - seen)}")


def scale_injections(model: NetworkModel, lam: float) -> NetworkModel:
    """Multiply every complex injection by ``lam`` (PV voltage setpoints unchanged)."""
    return dataclasses.replace(model, scale=model.scale * lam)


# ---------------------------------------------------------------------------
# MATPOWER case text

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(body: str, name: str, min_cols: int) -> np.ndarray:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(x) for x in chunk.replace(",", " ").split()])
        except ValueError as exc:
            raise ParseError(f"mpc.{name}: bad row {chunk!r}") from exc
    if not rows:
        raise ParseError(f"mpc.{name} is empty")
    width = len(rows[0])
    if width < min_cols or any(len(r) != width for r in rows):
        raise ParseError(f"mpc.{name}: rows must all have the same width >= {min_cols}")
    return np.array(rows)


def parse_matpower(text: str, name: str = "") -> NetworkModel:
    """Read a MATPOWER version-2 case struct into a :class:`NetworkModel`."""
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    if m is None:
        raise ParseError("mpc.baseMVA not found")
    base = float(m.group(1))
    mats = {k: v for k, v in _MATRIX_RE.findall(clean)}
    for key in ("bus", "gen", "branch"):
        if key not in mats:
            raise ParseError(f"mpc.{key} not found")
    bus = _matrix(mats["bus"], "bus", 13)
    gen = _matrix(mats["gen"], "gen", 8)
    branch = _matrix(mats["branch"], "branch", 11)

    type_map = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
    gens_at: dict[int, list[np.ndarray]] = {}
    for g in gen:
        if g[7] > 0:
            gens_at.setdefault(int(g[0]), []).append(g)

    buses = []
    for row in bus:
        bid, btype = int(row[0]), int(row[1])
        if btype not in type_map:
            raise ValidationError(f"bus {bid}: unsupported bus type {btype}")
        kind = type_map[btype]
        gs = gens_at.get(bid, [])
        if kind is BusKind.PV and not gs:
            kind = BusKind.PQ
        pg = sum(g[1] for g in gs)
        qg = sum(g[2] for g in gs)
        vset = row[7]
        if kind is not BusKind.PQ and gs:
            vgs = {float(g[5]) for g in gs}
            if len(vgs) > 1:
                raise ValidationError(f"bus {bid}: conflicting generator voltage setpoints {sorted(vgs)}")
            vset = vgs.pop()
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                p_inject=(pg - row[2]) / base,
                q_inject=(qg - row[3]) / base,
                v_setpoint=float(vset),
                v0_angle=float(np.deg2rad(row[8])) if kind is BusKind.SLACK else 0.0,
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
            )
        )
    known = {b.id for b in buses}
    for bid in gens_at:
        if bid not in known:
            raise ValidationError(f"generator at unknown bus {bid}")

    branches = []
    for row in branch:
        ratio = row[8] if row[8] != 0 else 1.0
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                series_z=complex(row[2], row[3]),
                charging_b=float(row[4]),
                tap=complex(ratio * np.exp(1j * np.deg2rad(row[9]))),
                in_service=bool(row[10] > 0),
            )
        )
    return NetworkModel(tuple(buses), tuple(branches), base_mva=base, name=name)


def matpower_loads(text: str) -> dict[int, complex]:
    """Per-bus demand ``Pd + j Qd`` in per-unit (consumption-positive) from a MATPOWER case."""
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    mats = dict(_MATRIX_RE.findall(clean))
    if m is None or "bus" not in mats:
        raise ParseError("mpc.baseMVA or mpc.bus not found")
    base = float(m.group(1))
    bus = _matrix(mats["bus"], "bus", 13)
    return {int(r[0]): complex(r[2], r[3]) / base for r in bus}


def _num(x) -> str:
    return repr(float(x))


def to_matpower(model: NetworkModel) -> str:
    """Write the model as a MATPOWER case; net injections become ``Pd``/``Qd``, generators carry none.

    Slack and PV buses get one zero-output generator holding the voltage setpoint.
    """
    base = model.base_mva
    s = model.s_inject
    kind_code = {BusKind.PQ: 1, BusKind.PV: 2, BusKind.SLACK: 3}
    fn = model.name or "case"
    lines = [f"function mpc = {fn}", "mpc.version = '2';", f"mpc.baseMVA = {_num(base)};", "", "mpc.bus = ["]
    for b, si in zip(model.buses, s):
        ang = np.rad2deg(b.v0_angle)
        lines.append(
            f"\t{b.id}\t{kind_code[b.kind]}\t{_num(-si.real * base)}\t{_num(-si.imag * base)}\t"
            f"{_num(b.shunt_g * base)}\t{_num(b.shunt_b * base)}\t1\t{_num(b.v_setpoint)}\t{_num(ang)}\t0\t1\t1.1\t0.9;"
        )
    lines += ["];", "", "mpc.gen = ["]
    for b in model.buses:
        if b.kind is not BusKind.PQ:
            lines.append(f"\t{b.id}\t0\t0\t9999\t-9999\t{_num(b.v_setpoint)}\t{_num(base)}\t1\t9999\t-9999;")
    lines += ["];", "", "mpc.branch = ["]
    for br in model.branches:
        t = complex(br.tap)
        ratio = 0.0 if t == 1 else abs(t)
        shift = float(np.rad2deg(np.angle(t)))
        lines.append(
            f"\t{br.from_bus}\t{br.to_bus}\t{_num(br.series_z.real)}\t{_num(br.series_z.imag)}\t{_num(br.charging_b)}\t"
            f"0\t0\t0\t{_num(ratio)}\t{_num(shift)}\t{int(br.in_service)}\t-360\t360;"
        )
    lines += ["];", ""]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# internal JSON schema (see docs/case_schema.md)

def to_json(model: NetworkModel) -> str:
    doc = {
        "name": model.name,
        "base_mva": model.base_mva,
        "scale": model.scale,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind.value,
                "p_inject": b.p_inject,
                "q_inject": b.q_inject,
                "v_setpoint": b.v_setpoint,
                "v0_angle": b.v0_angle,
                "shunt_g": b.shunt_g,
                "shunt_b": b.shunt_b,
            }
            for b in model.buses
        ],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "series_z": [br.series_z.real, br.series_z.imag],
                "charging_b": br.charging_b,
                "tap": [complex(br.tap).real, complex(br.tap).imag],
                "in_service": br.in_service,
            }
            for br in model.branches
        ],
    }
    return json.dumps(doc, indent=1)


def from_json(text: str) -> NetworkModel:
    try:
        doc = json.loads(text)
        buses = [
            Bus(
                id=int(b["id"]),
                kind=BusKind(b["kind"]),
                p_inject=float(b.get("p_inject", 0.0)),
                q_inject=float(b.get("q_inject", 0.0)),
                v_setpoint=float(b.get("v_setpoint", 1.0)),
                v0_angle=float(b.get("v0_angle", 0.0)),
                shunt_g=float(b.get("shunt_g", 0.0)),
                shunt_b=float(b.get("shunt_b", 0.0)),
            )
            for b in doc["buses"]
        ]
        branches = [
            Branch(
                from_bus=int(br["from"]),
                to_bus=int(br["to"]),
                series_z=complex(*br["series_z"]),
                charging_b=float(br.get("charging_b", 0.0)),
                tap=complex(*br.get("tap", [1.0, 0.0])),
                in_service=bool(br.get("in_service", True)),
            )
            for br in doc["branches"]
        ]
        base = float(doc.get("base_mva", 100.0))
        scale = float(doc.get("scale", 1.0))
        name = str(doc.get("name", ""))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CaseError):
            raise
        raise ParseError(f"bad JSON case: {exc}") from exc
    return NetworkModel(tuple(buses), tuple(branches), base_mva=base, scale=scale, name=name)


def load_case(path) -> NetworkModel:
    """Load a ``.m`` MATPOWER case or a ``.json`` case by file extension."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return from_json(text)
    return parse_matpower(text, name=path.stem)


def builtin_case(name: str) -> NetworkModel:
    """Load one of the bundled cases (``case14``, ``case118``, ``twobus``)."""
    data = Path(__file__).parent / "data"
    for suffix in (".m", ".json"):
        p = data / f"{name}{suffix}"
        if p.exists():
            return load_case(p)
    raise FileNotFoundError(f"no bundled case {name!r}")


def two_bus(z: complex = 0.25j, s: complex = -1.0, v0: complex = 1.0) -> NetworkModel:
    """Slack plus one PQ bus joined by a single branch of impedance ``z``."""
    buses = (
        Bus(1, BusKind.SLACK, v_setpoint=abs(v0), v0_angle=float(np.angle(v0))),
        Bus(2, BusKind.PQ, p_inject=complex(s).real, q_inject=complex(s).imag),
    )
    return NetworkModel(buses, (Branch(1, 2, complex(z)),), base_mva=100.0, name="twobus")
