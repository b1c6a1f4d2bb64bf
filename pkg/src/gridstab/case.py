"""Power-system case data: MATPOWER/JSON ingestion, dynamics sidecars and
measurement-resolution bookkeeping."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal
from enum import Enum
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

# Raw parameters that carry measurement uncertainty, per element kind.
UNCERTAIN_FIELDS = {
    "bus": ("active_demand", "reactive_demand"),
    "gen": ("active_generation", "reactive_generation"),
    "branch": ("resistance", "reactance"),
}


class CaseError(ValueError):
    """Raised for malformed or inconsistent case data."""


class BusKind(str, Enum):
    PQ = "PQ"
    PV = "PV"
    SLACK = "slack"


_MATPOWER_BUS_TYPES = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    active_demand: float = 0.0  # MW
    reactive_demand: float = 0.0  # MVAr
    base_voltage: float = 0.0  # kV
    voltage_magnitude_setpoint: float | None = None  # p.u., PV/slack only
    shunt_conductance: float = 0.0  # p.u. on base_mva
    shunt_susceptance: float = 0.0  # p.u. on base_mva


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    line_charging_susceptance: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0  # radians


@dataclass(frozen=True)
class Generator:
    bus: int
    active_generation: float  # MW
    reactive_generation: float = 0.0  # MVAr
    inertia: float | None = None  # H, seconds
    damping: float | None = None  # D
    transient_reactance: float | None = None  # x'_d, p.u.

    @property
    def effective_damping(self) -> float | None:
        if self.inertia is None or self.damping is None:
            return None
        return self.damping / (2.0 * self.inertia)


@dataclass(frozen=True)
class PowerSystemCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    nominal_frequency: float = 60.0
    # key -> one unit in the last printed digit of the raw value
    resolution: dict[str, float] = field(default_factory=dict, compare=True)
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        validate(self)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def has_dynamics(self) -> bool:
        return all(
            g.inertia is not None and g.damping is not None and g.transient_reactance is not None
            for g in self.generators
        )

    @property
    def beta(self) -> np.ndarray:
        if not self.has_dynamics:
            raise CaseError("generator dynamics are not set; call merge_dynamics first")
        return np.array([g.effective_damping for g in self.generators])

    def raw_value(self, key: str) -> float:
        kind, idx, name = parse_key(key)
        return getattr(self._element(kind, idx), name)

    def raw_values(self, keys) -> list[float]:
        pos = self.bus_index()
        out = []
        for key in keys:
            kind, idx, name = parse_key(key)
            elem = self.buses[pos[idx]] if kind == "bus" else self._element(kind, idx)
            out.append(getattr(elem, name))
        return out

    def _element(self, kind: str, idx: int):
        if kind == "bus":
            return self.buses[self.bus_index()[idx]]
        if kind == "gen":
            return self.generators[idx]
        if kind == "branch":
            return self.branches[idx]
        raise CaseError(f"unknown element kind {kind!r}")

    def with_values(self, values: dict[str, float]) -> "PowerSystemCase":
        """Return a copy with raw parameters overridden by key."""
        grouped: dict[tuple[str, int], dict[str, float]] = {}
        for key, value in values.items():
            kind, idx, name = parse_key(key)
            grouped.setdefault((kind, idx), {})[name] = float(value)
        buses, gens, branches = list(self.buses), list(self.generators), list(self.branches)
        pos = self.bus_index()
        for (kind, idx), changes in grouped.items():
            if kind == "bus":
                buses[pos[idx]] = replace(buses[pos[idx]], **changes)
            elif kind == "gen":
                gens[idx] = replace(gens[idx], **changes)
            elif kind == "branch":
                branches[idx] = replace(branches[idx], **changes)
            else:
                raise CaseError(f"unknown element kind {kind!r}")
        return replace(self, buses=tuple(buses), generators=tuple(gens), branches=tuple(branches))


def make_key(kind: str, idx: int, name: str) -> str:
    return f"{kind}:{idx}:{name}"


def parse_key(key: str) -> tuple[str, int, str]:
    try:
        kind, idx, name = key.split(":")
        return kind, int(idx), name
    except ValueError as exc:
        raise CaseError(f"malformed parameter key {key!r}") from exc


def validate(case: PowerSystemCase) -> None:
    ids = [b.id for b in case.buses]
    seen = set()
    for i in ids:
        if i in seen:
            raise CaseError(f"duplicate bus id {i}")
        seen.add(i)
    for b in case.buses:
        if not (math.isfinite(b.active_demand) and math.isfinite(b.reactive_demand)):
            raise CaseError(f"bus {b.id}: non-finite demand")
        if b.voltage_magnitude_setpoint is not None and not b.voltage_magnitude_setpoint > 0:
            raise CaseError(f"bus {b.id}: voltage setpoint must be positive")
    dangling = []
    for k, br in enumerate(case.branches):
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {k}: from_bus equals to_bus ({br.from_bus})")
        if br.resistance == 0 and br.reactance == 0:
            raise CaseError(f"branch {k} ({br.from_bus}-{br.to_bus}): zero impedance")
        missing = [e for e in (br.from_bus, br.to_bus) if e not in seen]
        if missing:
            dangling.append(f"branch {k} ({br.from_bus}-{br.to_bus}) -> missing bus {missing}")
    if dangling:
        raise CaseError("dangling branch endpoints: " + "; ".join(dangling))
    slack = [b.id for b in case.buses if b.kind == BusKind.SLACK]
    if len(slack) != 1:
        raise CaseError(f"case must have exactly one slack bus, found {len(slack)}")
    gen_buses = set()
    for i, g in enumerate(case.generators):
        if g.bus not in seen:
            raise CaseError(f"generator {i}: bus {g.bus} does not exist")
        if g.bus in gen_buses:
            raise CaseError(f"generator {i}: more than one generator on bus {g.bus}")
        gen_buses.add(g.bus)
        if g.inertia is not None and not g.inertia > 0:
            raise CaseError(f"generator {i}: inertia H must be positive, got {g.inertia}")
        if g.transient_reactance is not None and g.transient_reactance == 0:
            raise CaseError(f"generator {i}: zero transient reactance")


# ---------------------------------------------------------------------------
# last-significant-digit rule


def last_digit_unit(text: str) -> float:
    """One unit in the last printed digit of a decimal literal.

    ``"160"`` -> 1, ``"0.020"`` -> 0.001, ``"1.5e-3"`` -> 1e-4.
    """
    d = Decimal(text.strip())
    return float(Decimal(1).scaleb(d.as_tuple().exponent))


def _literal(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


# ---------------------------------------------------------------------------
# MATPOWER


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([^\[;'\n]+);")
_SUPPORTED = {"bus", "gen", "branch", "baseMVA", "version"}


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix_rows(name: str, body: str, min_cols: int) -> list[list[str]]:
    rows = []
    chunks = [c for part in body.split("\n") for c in part.split(";")]
    for c in chunks:
        toks = c.replace(",", " ").split()
        if not toks:
            continue
        r = len(rows) + 1
        for col, t in enumerate(toks, 1):
            try:
                float(t)
            except ValueError:
                raise CaseError(f"mpc.{name} row {r} column {col}: non-numeric entry {t!r}") from None
        if len(toks) < min_cols:
            raise CaseError(f"mpc.{name} row {r}: expected at least {min_cols} columns, got {len(toks)}")
        rows.append(toks)
    return rows


def parse_matpower(text: str, nominal_frequency: float = 60.0) -> PowerSystemCase:
    clean = _strip_comments(text)
    warnings: list[str] = []
    matrices = {m.group(1): m.group(2) for m in _MATRIX_RE.finditer(clean)}
    scalars = {m.group(1): m.group(2).strip() for m in _SCALAR_RE.finditer(clean)}
    for name in sorted(set(matrices) | set(scalars)):
        if name not in _SUPPORTED:
            warnings.append(f"ignored unsupported field mpc.{name}")
    for need in ("bus", "gen", "branch"):
        if need not in matrices:
            raise CaseError(f"missing mpc.{need} matrix")
    base_mva = float(scalars.get("baseMVA", "100"))

    resolution: dict[str, float] = {}
    bus_rows = _matrix_rows("bus", matrices["bus"], 13)
    gen_rows = _matrix_rows("gen", matrices["gen"], 10)
    br_rows = _matrix_rows("branch", matrices["branch"], 11)

    vset: dict[int, float] = {}
    generators = []
    for r, row in enumerate(gen_rows, 1):
        if float(row[7]) <= 0:
            warnings.append(f"mpc.gen row {r}: out-of-service generator skipped")
            continue
        i = len(generators)
        bus = int(float(row[0]))
        generators.append(Generator(bus=bus, active_generation=float(row[1]), reactive_generation=float(row[2])))
        vset[bus] = float(row[5])
        resolution[make_key("gen", i, "active_generation")] = last_digit_unit(row[1])
        resolution[make_key("gen", i, "reactive_generation")] = last_digit_unit(row[2])

    buses = []
    for r, row in enumerate(bus_rows, 1):
        bid = int(float(row[0]))
        btype = int(float(row[1]))
        if btype not in _MATPOWER_BUS_TYPES:
            raise CaseError(f"mpc.bus row {r} column 2: unsupported bus type {btype}")
        kind = _MATPOWER_BUS_TYPES[btype]
        setpoint = None
        if kind != BusKind.PQ:
            setpoint = vset.get(bid, float(row[7]))
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                active_demand=float(row[2]),
                reactive_demand=float(row[3]),
                shunt_conductance=float(row[4]) / base_mva,
                shunt_susceptance=float(row[5]) / base_mva,
                base_voltage=float(row[9]),
                voltage_magnitude_setpoint=setpoint,
            )
        )
        resolution[make_key("bus", bid, "active_demand")] = last_digit_unit(row[2])
        resolution[make_key("bus", bid, "reactive_demand")] = last_digit_unit(row[3])

    branches = []
    for r, row in enumerate(br_rows, 1):
        if float(row[10]) <= 0:
            warnings.append(f"mpc.branch row {r}: out-of-service branch skipped")
            continue
        i = len(branches)
        tap = float(row[8])
        branches.append(
            Branch(
                from_bus=int(float(row[0])),
                to_bus=int(float(row[1])),
                resistance=float(row[2]),
                reactance=float(row[3]),
                line_charging_susceptance=float(row[4]),
                tap_ratio=tap if tap != 0 else 1.0,
                phase_shift=math.radians(float(row[9])),
            )
        )
        resolution[make_key("branch", i, "resistance")] = last_digit_unit(row[2])
        resolution[make_key("branch", i, "reactance")] = last_digit_unit(row[3])

    return PowerSystemCase(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        base_mva=base_mva,
        nominal_frequency=nominal_frequency,
        resolution=resolution,
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# native JSON


def case_to_dict(case: PowerSystemCase) -> dict:
    def clean(d):
        return {k: (v.value if isinstance(v, Enum) else v) for k, v in d.items()}

    return {
        "schema_version": SCHEMA_VERSION,
        "base_mva": case.base_mva,
        "nominal_frequency": case.nominal_frequency,
        "buses": [clean(asdict(b)) for b in case.buses],
        "branches": [asdict(b) for b in case.branches],
        "generators": [asdict(g) for g in case.generators],
        "resolution": dict(sorted(case.resolution.items())),
    }


def case_from_dict(data: dict) -> PowerSystemCase:
    try:
        buses = tuple(Bus(**{**b, "kind": BusKind(b["kind"])}) for b in data["buses"])
        branches = tuple(Branch(**b) for b in data.get("branches", []))
        generators = tuple(Generator(**g) for g in data.get("generators", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"invalid case JSON: {exc}") from exc
    return PowerSystemCase(
        buses=buses,
        branches=branches,
        generators=generators,
        base_mva=float(data.get("base_mva", 100.0)),
        nominal_frequency=float(data.get("nominal_frequency", 60.0)),
        resolution={k: float(v) for k, v in data.get("resolution", {}).items()},
    )


def serialize(case: PowerSystemCase) -> str:
    """Canonical JSON: stable key order, shortest round-trip floats."""
    return json.dumps(case_to_dict(case), indent=2) + "\n"


def parse_case(text: str, nominal_frequency: float = 60.0) -> PowerSystemCase:
    """Parse MATPOWER ``.m`` text or native case JSON (detected by content)."""
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CaseError(f"invalid case JSON: {exc}") from exc
        return case_from_dict(data)
    return parse_matpower(text, nominal_frequency=nominal_frequency)


def load_case(path, dynamics=None) -> PowerSystemCase:
    case = parse_case(Path(path).read_text())
    if dynamics is not None:
        case = merge_dynamics(case, load_dynamics(dynamics))
    return case


# ---------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class DynamicsRow:
    gen_index: int  # 1-based, file order of generators
    H: float
    D: float
    xd_prime: float


def parse_dynamics_csv(text: str) -> list[DynamicsRow]:
    reader = csv.DictReader(io.StringIO(text))
    expected = ["gen_index", "H", "D", "xd_prime"]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
        raise CaseError(f"dynamics CSV header must be {','.join(expected)}")
    rows = []
    for r, rec in enumerate(reader, 2):
        try:
            rows.append(
                DynamicsRow(int(rec["gen_index"]), float(rec["H"]), float(rec["D"]), float(rec["xd_prime"]))
            )
        except (TypeError, ValueError) as exc:
            raise CaseError(f"dynamics CSV line {r}: {exc}") from exc
    return rows


def load_dynamics(path) -> list[DynamicsRow]:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        return [DynamicsRow(int(d["gen_index"]), float(d["H"]), float(d["D"]), float(d["xd_prime"])) for d in data]
    return parse_dynamics_csv(text)


def merge_dynamics(case: PowerSystemCase, dynamics) -> PowerSystemCase:
    """Attach H, D and x'_d to every generator; rows are keyed by 1-based index."""
    rows = [r if isinstance(r, DynamicsRow) else DynamicsRow(*r) for r in dynamics]
    by_index: dict[int, DynamicsRow] = {}
    for r in rows:
        if r.gen_index in by_index:
            raise CaseError(f"duplicate dynamics row for generator {r.gen_index}")
        if not 1 <= r.gen_index <= case.n_generators:
            raise CaseError(f"dynamics row for unknown generator {r.gen_index}")
        if not r.H > 0:
            raise CaseError(f"generator {r.gen_index}: inertia H must be positive, got {r.H}")
        by_index[r.gen_index] = r
    missing = [i for i in range(1, case.n_generators + 1) if i not in by_index]
    if missing:
        raise CaseError(f"missing dynamics rows for generators {missing}")
    gens = tuple(
        replace(g, inertia=by_index[i].H, damping=by_index[i].D, transient_reactance=by_index[i].xd_prime)
        for i, g in enumerate(case.generators, 1)
    )
    return replace(case, generators=gens)


def default_uncertainty(case: PowerSystemCase):
    """Per-parameter standard deviations from printed measurement resolution.

    Parameters whose nominal value is zero carry no uncertainty (a zero
    literal has no significant digit).
    """
    from .uncertainty import UncertaintySpec

    sigmas = {}
    for kind, names in UNCERTAIN_FIELDS.items():
        count = {"bus": None, "gen": case.n_generators, "branch": len(case.branches)}[kind]
        indices = [b.id for b in case.buses] if count is None else range(count)
        for idx in indices:
            for name in names:
                key = make_key(kind, idx, name)
                value = case.raw_value(key)
                if value == 0:
                    continue
                step = case.resolution.get(key)
                if step is None:
                    step = last_digit_unit(_literal(value))
                sigmas[key] = step
    return UncertaintySpec(parameters=sigmas)
