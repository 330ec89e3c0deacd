"""Power-system case handling: parsing, validation, per-unit model, Y matrices.

Everything downstream works on the per-unit :class:`Network` produced here.
Supported inputs are the MATPOWER text case format (bus/gen/branch/gencost
tables) plus an optional auxiliary ratings file, and the package's own
single-document network format used for lossless round trips.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import CaseParseError, NetworkValidationError


class BusKind(enum.Enum):
    REFERENCE = "reference"
    GENERATOR = "generator"
    LOAD = "load"


@dataclass(frozen=True)
class Bus:
    """One bus of the per-unit network model."""

    id: int
    kind: BusKind
    p_demand: float
    q_demand: float
    g_shunt: float
    b_shunt: float
    v_min: float
    v_max: float

    def __post_init__(self):
        if not (0.0 < self.v_min < self.v_max):
            raise NetworkValidationError(
                f"bus {self.id}: voltage bounds must satisfy 0 < v_min < v_max "
                f"(got {self.v_min}, {self.v_max})"
            )


@dataclass(frozen=True)
class Branch:
    """One branch (line or transformer), pi-model, per-unit.

    ``flow_limit`` is the active-power magnitude limit; ``None`` means
    unconstrained. ``tap`` is the off-nominal turns ratio on the from side.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    tap: float = 1.0
    flow_limit: float | None = None

    def __post_init__(self):
        if self.r * self.r + self.x * self.x <= 0.0:
            raise NetworkValidationError(
                f"branch {self.from_bus}-{self.to_bus}: zero series impedance"
            )
        if self.tap <= 0.0:
            raise NetworkValidationError(
                f"branch {self.from_bus}-{self.to_bus}: tap must be positive"
            )
        if self.flow_limit is not None and self.flow_limit <= 0.0:
            raise NetworkValidationError(
                f"branch {self.from_bus}-{self.to_bus}: flow limit must be positive"
            )

    def series_admittance(self) -> complex:
        """Series admittance 1/(r + jx), tap-adjusted (divided by tap)."""
        return 1.0 / complex(self.r, self.x) / self.tap


@dataclass(frozen=True)
class Generator:
    """Generating unit with quadratic active and reactive cost.

    Costs are in currency per per-unit power: ``cost_a * P + cost_b * P**2
    + cost_c * Q**2``. ``p_start``/``q_start``/``v_setpoint`` carry the case
    file's operating snapshot for power-flow replay; they do not enter the
    pricing model.
    """

    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost_a: float
    cost_b: float
    cost_c: float
    p_start: float = 0.0
    q_start: float = 0.0
    v_setpoint: float = 1.0

    def __post_init__(self):
        if self.p_min > self.p_max or self.q_min > self.q_max:
            raise NetworkValidationError(
                f"generator at bus {self.bus}: inverted output bounds"
            )
        if self.cost_b < 0.0 or self.cost_c < 0.0:
            raise NetworkValidationError(
                f"generator at bus {self.bus}: quadratic cost must be nonnegative"
            )


@dataclass(frozen=True)
class Network:
    """Validated per-unit network. Immutable; safe to share between threads."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float

    def __post_init__(self):
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    def bus_index(self, bus_id: int) -> int:
        """Internal 0-based index of an external bus id."""
        return self._index_map()[bus_id]

    def _index_map(self) -> dict[int, int]:
        return {bus.id: i for i, bus in enumerate(self.buses)}

    @property
    def ref_index(self) -> int:
        for i, bus in enumerate(self.buses):
            if bus.kind is BusKind.REFERENCE:
                return i
        raise NetworkValidationError("no reference bus")

    def demand_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bus (p_demand, q_demand) arrays in file order."""
        p = np.array([b.p_demand for b in self.buses])
        q = np.array([b.q_demand for b in self.buses])
        return p, q

    def branch_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Internal (from, to) index arrays, one entry per branch."""
        idx = self._index_map()
        f = np.array([idx[br.from_bus] for br in self.branches], dtype=int)
        t = np.array([idx[br.to_bus] for br in self.branches], dtype=int)
        return f, t

    def gen_bus_indices(self) -> np.ndarray:
        idx = self._index_map()
        return np.array([idx[g.bus] for g in self.generators], dtype=int)


def _validate(net: Network) -> None:
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkValidationError("duplicate bus ids")
    known = set(ids)
    refs = [b.id for b in net.buses if b.kind is BusKind.REFERENCE]
    if len(refs) != 1:
        raise NetworkValidationError(
            f"exactly one reference bus required, found {len(refs)}"
        )
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise NetworkValidationError(
                    f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}"
                )
    for g in net.generators:
        if g.bus not in known:
            raise NetworkValidationError(f"generator references unknown bus {g.bus}")
    if net.base_mva <= 0.0:
        raise NetworkValidationError("base_mva must be positive")
    # connectivity over the branch graph
    if net.buses:
        adj: dict[int, set[int]] = {i: set() for i in known}
        for br in net.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen = set()
        stack = [net.buses[0].id]
        while stack:
            b = stack.pop()
            if b in seen:
                continue
            seen.add(b)
            stack.extend(adj[b] - seen)
        if seen != known:
            missing = sorted(known - seen)[:5]
            raise NetworkValidationError(
                f"network is not connected; unreachable buses include {missing}"
            )


@dataclass(frozen=True)
class AdmittancePair:
    """Full admittance matrix Y = G + jB and its shunt-free companion Y'."""

    y_full: np.ndarray
    y_series: np.ndarray


def build_admittance(net: Network) -> AdmittancePair:
    """Build Y (pi-model with shunts and charging) and Y' (series only).

    Tapped branches place y/t**2 on the from diagonal and y/t on the
    off-diagonals; half of the line-charging susceptance goes to each end
    of ``y_full``. ``y_series`` keeps only the series elements, taps applied.
    This is the exact AC model used by the power-flow oracle.
    """
    n = net.n_bus
    y_full = np.zeros((n, n), dtype=complex)
    y_series = np.zeros((n, n), dtype=complex)
    fidx, tidx = net.branch_endpoints()
    for m, br in enumerate(net.branches):
        ys = 1.0 / complex(br.r, br.x)
        t = br.tap
        i, j = fidx[m], tidx[m]
        y_series[i, i] += ys / (t * t)
        y_series[j, j] += ys
        y_series[i, j] -= ys / t
        y_series[j, i] -= ys / t
        ysh = complex(0.0, br.b_charge / 2.0)
        y_full[i, i] += (ys + ysh) / (t * t)
        y_full[j, j] += ys + ysh
        y_full[i, j] -= ys / t
        y_full[j, i] -= ys / t
    for k, bus in enumerate(net.buses):
        y_full[k, k] += complex(bus.g_shunt, bus.b_shunt)
    return AdmittancePair(y_full=y_full, y_series=y_series)


def build_linear_admittance(net: Network) -> AdmittancePair:
    """Admittance pair for the linearized model.

    ``y_full`` is the standard pi-model matrix (it feeds the voltage and
    reactive couplings, where the off-nominal turns ratio's voltage
    conversion is real physics). ``y_series`` places the tap-adjusted
    series value y/t symmetrically at both ends: a homogeneous linear
    model carries no constant terms, so the pi-model's y/t**2 versus y/t
    asymmetry cannot be represented in the angle-to-flow path and would
    bias tapped-branch flows by a term proportional to the absolute angle.
    The symmetric placement matches the difference-form branch equations
    exactly; for tap = 1 the pair coincides with :func:`build_admittance`.
    """
    n = net.n_bus
    y_series = np.zeros((n, n), dtype=complex)
    fidx, tidx = net.branch_endpoints()
    for m, br in enumerate(net.branches):
        ye = br.series_admittance()
        i, j = fidx[m], tidx[m]
        y_series[i, i] += ye
        y_series[j, j] += ye
        y_series[i, j] -= ye
        y_series[j, i] -= ye
    return AdmittancePair(
        y_full=build_admittance(net).y_full, y_series=y_series
    )


def scale_load(net: Network, factor: float) -> Network:
    """Return a copy with every bus demand multiplied by ``factor``."""
    if not (factor > 0.0):
        raise ValueError(f"load scale factor must be positive, got {factor}")
    buses = tuple(
        replace(b, p_demand=b.p_demand * factor, q_demand=b.q_demand * factor)
        for b in net.buses
    )
    return replace(net, buses=buses)


# ---------------------------------------------------------------------------
# MATPOWER text format
# ---------------------------------------------------------------------------

_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _extract_tables(text: str) -> tuple[float, dict[str, list[tuple[int, list[float]]]]]:
    """Pull baseMVA and all numeric tables out of MATPOWER text.

    Rows come back with their 1-based source line for error reporting.
    """
    base = None
    m = _SCALAR_RE.search(text)
    if m:
        base = float(m.group(1))
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if current is None:
            m = _TABLE_RE.search(line)
            if m:
                current = m.group(1)
                tables[current] = []
                line = line[m.end():].strip()
                if not line:
                    continue
            else:
                continue
        # inside a table
        done = False
        if "]" in line:
            line = line[: line.index("]")]
            done = True
        line = line.strip().rstrip(";").strip()
        if line:
            try:
                row = [float(tok) for tok in line.replace(",", " ").split()]
            except ValueError:
                raise CaseParseError(
                    f"malformed {current} table row: {line!r}", line=lineno
                )
            tables[current].append((lineno, row))
        if done:
            current = None
    if base is None:
        raise CaseParseError("missing mpc.baseMVA declaration")
    return base, tables


def parse_case(text: str) -> Network:
    """Parse a MATPOWER text case into a per-unit :class:`Network`.

    Loads, shunts and limits are divided by baseMVA; polynomial cost
    coefficients are rescaled from per-MW to per-per-unit. When the gencost
    table has no reactive block, the reactive quadratic cost defaults to the
    active quadratic cost. Out-of-service branches and generators are
    dropped; branch phase-shift angles are ignored (modeled as 0).
    """
    base, tables = _extract_tables(text)
    for required in ("bus", "gen", "branch", "gencost"):
        if required not in tables or not tables[required]:
            raise CaseParseError(f"missing mpc.{required} table")

    buses = []
    for lineno, row in tables["bus"]:
        if len(row) < 13:
            raise CaseParseError(
                f"bus row needs 13 columns, got {len(row)}", line=lineno
            )
        btype = int(row[1])
        if btype == 3:
            kind = BusKind.REFERENCE
        elif btype == 2:
            kind = BusKind.GENERATOR
        elif btype == 1:
            kind = BusKind.LOAD
        else:
            raise CaseParseError(
                f"bus {int(row[0])}: unsupported bus type {btype}", line=lineno
            )
        buses.append(
            Bus(
                id=int(row[0]),
                kind=kind,
                p_demand=row[2] / base,
                q_demand=row[3] / base,
                g_shunt=row[4] / base,
                b_shunt=row[5] / base,
                v_min=row[12],
                v_max=row[11],
            )
        )

    branches = []
    for lineno, row in tables["branch"]:
        if len(row) < 11:
            raise CaseParseError(
                f"branch row needs at least 11 columns, got {len(row)}", line=lineno
            )
        if int(row[10]) == 0:
            continue
        rate_a = row[5] / base
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charge=row[4],
                tap=row[8] if row[8] > 0.0 else 1.0,
                flow_limit=rate_a if rate_a > 0.0 else None,
            )
        )

    gen_rows = [(lineno, row) for lineno, row in tables["gen"]]
    cost_rows = tables["gencost"]
    n_gen_rows = len(gen_rows)
    if len(cost_rows) not in (n_gen_rows, 2 * n_gen_rows):
        raise CaseParseError(
            f"gencost has {len(cost_rows)} rows for {n_gen_rows} generators "
            "(expected one or two blocks)"
        )

    def poly_coeffs(lineno, row):
        if len(row) < 4:
            raise CaseParseError("gencost row too short", line=lineno)
        model, ncost = int(row[0]), int(row[3])
        if model != 2:
            raise CaseParseError(
                f"only polynomial gencost (model 2) supported, got {model}",
                line=lineno,
            )
        coeffs = row[4 : 4 + ncost]
        if len(coeffs) != ncost:
            raise CaseParseError("gencost coefficient count mismatch", line=lineno)
        if ncost > 3:
            raise CaseParseError(
                f"cost polynomials above quadratic unsupported (n={ncost})",
                line=lineno,
            )
        c2 = c1 = 0.0
        if ncost == 3:
            c2, c1 = coeffs[0], coeffs[1]
        elif ncost == 2:
            c1 = coeffs[0]
        elif ncost == 1:
            pass
        return c2, c1

    generators = []
    for k, (lineno, row) in enumerate(gen_rows):
        if len(row) < 10:
            raise CaseParseError(
                f"gen row needs at least 10 columns, got {len(row)}", line=lineno
            )
        if int(row[7]) == 0:
            continue
        c2, c1 = poly_coeffs(*cost_rows[k])
        cost_a = c1 * base
        cost_b = c2 * base * base
        if len(cost_rows) == 2 * n_gen_rows:
            q2, _ = poly_coeffs(*cost_rows[n_gen_rows + k])
            cost_c = q2 * base * base
        else:
            cost_c = cost_b
        generators.append(
            Generator(
                bus=int(row[0]),
                p_min=row[9] / base,
                p_max=row[8] / base,
                q_min=row[4] / base,
                q_max=row[3] / base,
                cost_a=cost_a,
                cost_b=cost_b,
                cost_c=cost_c,
                p_start=row[1] / base,
                q_start=row[2] / base,
                v_setpoint=row[5] if row[5] > 0.0 else 1.0,
            )
        )

    return Network(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        base_mva=base,
    )


# ---------------------------------------------------------------------------
# Auxiliary branch-rating file
# ---------------------------------------------------------------------------

def parse_ratings(text: str) -> list[tuple[int, int, float]]:
    """Parse a ratings file: one ``from to rating_mva`` triple per line."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw.replace("#", "%")).strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 3:
            raise CaseParseError(
                f"ratings row needs 'from to rating', got {line!r}", line=lineno
            )
        try:
            out.append((int(toks[0]), int(toks[1]), float(toks[2])))
        except ValueError:
            raise CaseParseError(f"malformed ratings row {line!r}", line=lineno)
    return out


def merge_ratings(net: Network, ratings: list[tuple[int, int, float]]) -> Network:
    """Attach per-branch MVA ratings, matching by position first.

    The k-th triple applies to the k-th branch when the endpoints agree
    (either orientation); otherwise it is assigned to the first not yet
    rated branch with matching endpoints. Ratings of 0 leave the branch
    unconstrained.
    """
    branches = list(net.branches)
    taken = [False] * len(branches)

    def endpoints_match(br: Branch, f: int, t: int) -> bool:
        return (br.from_bus, br.to_bus) in ((f, t), (t, f))

    for k, (f, t, mva) in enumerate(ratings):
        limit = mva / net.base_mva
        if k < len(branches) and not taken[k] and endpoints_match(branches[k], f, t):
            target = k
        else:
            target = next(
                (
                    m
                    for m, br in enumerate(branches)
                    if not taken[m] and endpoints_match(br, f, t)
                ),
                None,
            )
            if target is None:
                raise NetworkValidationError(
                    f"ratings row {k + 1}: no unmatched branch {f}-{t}"
                )
        taken[target] = True
        branches[target] = replace(
            branches[target], flow_limit=limit if limit > 0.0 else None
        )
    return replace(net, branches=tuple(branches))


# ---------------------------------------------------------------------------
# Native single-document format (lossless round trip)
# ---------------------------------------------------------------------------

_NATIVE_HEADER = "network v1"


def format_network(net: Network) -> str:
    """Render a Network in the package's line-oriented text format.

    Floats use shortest round-trip representation, so parsing the output
    reproduces the network exactly.
    """

    def f(x):
        return repr(float(x))

    lines = [_NATIVE_HEADER, f"base_mva {f(net.base_mva)}"]
    for b in net.buses:
        lines.append(
            f"bus {b.id} {b.kind.value} pd={f(b.p_demand)} qd={f(b.q_demand)} "
            f"gs={f(b.g_shunt)} bs={f(b.b_shunt)} vmin={f(b.v_min)} vmax={f(b.v_max)}"
        )
    for br in net.branches:
        lim = "inf" if br.flow_limit is None else f(br.flow_limit)
        lines.append(
            f"branch {br.from_bus} {br.to_bus} r={f(br.r)} x={f(br.x)} "
            f"b={f(br.b_charge)} tap={f(br.tap)} limit={lim}"
        )
    for g in net.generators:
        lines.append(
            f"gen {g.bus} pmin={f(g.p_min)} pmax={f(g.p_max)} qmin={f(g.q_min)} "
            f"qmax={f(g.q_max)} a={f(g.cost_a)} b={f(g.cost_b)} c={f(g.cost_c)} "
            f"pstart={f(g.p_start)} qstart={f(g.q_start)} vset={f(g.v_setpoint)}"
        )
    return "\n".join(lines) + "\n"


def parse_network(text: str) -> Network:
    """Parse the native format produced by :func:`format_network`."""
    lines = [ln for ln in text.splitlines()]
    body = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#")[0].strip()
        if line:
            body.append((lineno, line))
    if not body or body[0][1] != _NATIVE_HEADER:
        raise CaseParseError(f"expected '{_NATIVE_HEADER}' header")

    def kv(tokens, lineno):
        out = {}
        for tok in tokens:
            if "=" not in tok:
                raise CaseParseError(f"expected key=value, got {tok!r}", line=lineno)
            k, v = tok.split("=", 1)
            out[k] = v
        return out

    base_mva = None
    buses, branches, gens = [], [], []
    for lineno, line in body[1:]:
        toks = line.split()
        tag = toks[0]
        try:
            if tag == "base_mva":
                base_mva = float(toks[1])
            elif tag == "bus":
                d = kv(toks[3:], lineno)
                buses.append(
                    Bus(
                        id=int(toks[1]),
                        kind=BusKind(toks[2]),
                        p_demand=float(d["pd"]),
                        q_demand=float(d["qd"]),
                        g_shunt=float(d["gs"]),
                        b_shunt=float(d["bs"]),
                        v_min=float(d["vmin"]),
                        v_max=float(d["vmax"]),
                    )
                )
            elif tag == "branch":
                d = kv(toks[3:], lineno)
                lim = d["limit"]
                branches.append(
                    Branch(
                        from_bus=int(toks[1]),
                        to_bus=int(toks[2]),
                        r=float(d["r"]),
                        x=float(d["x"]),
                        b_charge=float(d["b"]),
                        tap=float(d["tap"]),
                        flow_limit=None if lim == "inf" else float(lim),
                    )
                )
            elif tag == "gen":
                d = kv(toks[2:], lineno)
                gens.append(
                    Generator(
                        bus=int(toks[1]),
                        p_min=float(d["pmin"]),
                        p_max=float(d["pmax"]),
                        q_min=float(d["qmin"]),
                        q_max=float(d["qmax"]),
                        cost_a=float(d["a"]),
                        cost_b=float(d["b"]),
                        cost_c=float(d["c"]),
                        p_start=float(d.get("pstart", "0.0")),
                        q_start=float(d.get("qstart", "0.0")),
                        v_setpoint=float(d.get("vset", "1.0")),
                    )
                )
            else:
                raise CaseParseError(f"unknown record {tag!r}", line=lineno)
        except (ValueError, KeyError, IndexError) as exc:
            raise CaseParseError(f"malformed {tag} record: {exc}", line=lineno)
    if base_mva is None:
        raise CaseParseError("missing base_mva record")
    return Network(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        base_mva=base_mva,
    )


def load_case(path: str) -> Network:
    """Read a case file, sniffing MATPOWER vs native format."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(("%", "#")):
            continue
        if line.startswith(_NATIVE_HEADER):
            return parse_network(text)
        break
    return parse_case(text)


def total_shunt_susceptance(adm: AdmittancePair) -> float:
    """Sum of all entries of B; equals the total shunt susceptance
    analytically and stays well defined with transformer taps."""
    return float(np.sum(adm.y_full.imag))
