"""Deterministic report emission.

Every report starts with a one-line format tag comment, then a header row,
then data rows in file order. Numbers are printed with 9 significant
digits, so identical inputs produce byte-identical files. Prices are
reported in currency per MWh (the model's per-unit prices divided by the
MVA base); power quantities stay in per-unit.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .engine import LmpRun
from .errors import CaseParseError
from .network import Network
from .acpf import AcBranchFlow, PfSolution

FORMAT_TAG = "linlmp-report v1"
BINDING_TOL = 1e-7


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"


def _render_csv(name: str, header: list[str], rows: list[list]) -> str:
    out = io.StringIO()
    out.write(f"# {FORMAT_TAG} {name}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return out.getvalue()


def _render_table(name: str, header: list[str], rows: list[list]) -> str:
    cells = [[fmt(v) for v in row] for row in rows]
    widths = [
        max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
        for i, h in enumerate(header)
    ]
    lines = [f"# {FORMAT_TAG} {name}"]
    lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    for row in cells:
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def render(name: str, header: list[str], rows: list[list], fmt_kind: str) -> str:
    if fmt_kind == "csv":
        return _render_csv(name, header, rows)
    if fmt_kind == "structured-text":
        return _render_table(name, header, rows)
    raise ValueError(f"unknown report format {fmt_kind!r}")


def report_extension(fmt_kind: str) -> str:
    return "csv" if fmt_kind == "csv" else "txt"


def bus_report(run: LmpRun, fmt_kind: str = "csv") -> str:
    """Per-bus prices (per MWh) split into components, plus the voltage."""
    net, res = run.net, run.result
    scale = 1.0 / net.base_mva
    p = res.prices
    header = [
        "bus",
        "almp_total", "almp_energy", "almp_congestion", "almp_voltage", "almp_loss",
        "rlmp_total", "rlmp_energy", "rlmp_congestion", "rlmp_voltage", "rlmp_loss",
        "voltage",
    ]
    rows = []
    for i, bus in enumerate(net.buses):
        rows.append([
            bus.id,
            p.almp_total[i] * scale, p.almp_energy[i] * scale,
            p.almp_congestion[i] * scale, p.almp_voltage[i] * scale,
            p.almp_loss[i] * scale,
            p.rlmp_total[i] * scale, p.rlmp_energy[i] * scale,
            p.rlmp_congestion[i] * scale, p.rlmp_voltage[i] * scale,
            p.rlmp_loss[i] * scale,
            res.voltages[i],
        ])
    return render("bus", header, rows, fmt_kind)


def branch_report(run: LmpRun, fmt_kind: str = "csv") -> str:
    """Per-branch flows, limits and binding flags (per-unit)."""
    net, res = run.net, run.result
    header = ["branch", "from", "to", "p_flow", "q_flow", "limit", "binding"]
    rows = []
    for m, br in enumerate(net.branches):
        limit = br.flow_limit if br.flow_limit is not None else float("inf")
        binding = int(
            abs(res.duals.mu[m]) > BINDING_TOL
            or (math.isfinite(limit) and abs(abs(res.flows.p_flow[m]) - limit) <= BINDING_TOL)
        )
        rows.append([
            m + 1, br.from_bus, br.to_bus,
            res.flows.p_flow[m], res.flows.q_flow[m], limit, binding,
        ])
    return render("branch", header, rows, fmt_kind)


def generator_report(run: LmpRun, fmt_kind: str = "csv") -> str:
    """Per-generator dispatch with at-limit flags (per-unit)."""
    net, res = run.net, run.result
    header = ["gen", "bus", "p_gen", "q_gen", "p_at_limit", "q_at_limit"]
    rows = []
    for k, g in enumerate(net.generators):
        pg, qg = res.dispatch_p[k], res.dispatch_q[k]
        p_lim = int(abs(pg - g.p_min) <= BINDING_TOL or abs(pg - g.p_max) <= BINDING_TOL)
        q_lim = int(abs(qg - g.q_min) <= BINDING_TOL or abs(qg - g.q_max) <= BINDING_TOL)
        rows.append([k + 1, g.bus, pg, qg, p_lim, q_lim])
    return render("generator", header, rows, fmt_kind)


def loss_branch_report(run: LmpRun, fmt_kind: str = "csv") -> str:
    """Per-branch loss contributions at the converged linearization point."""
    net = run.net
    flows = run.loss.flows
    header = ["branch", "from", "to", "p_flow", "p_loss", "q_loss"]
    rows = []
    for m, br in enumerate(net.branches):
        sq = flows.p_flow[m] ** 2
        rows.append([m + 1, br.from_bus, br.to_bus, flows.p_flow[m], sq * br.r, sq * br.x])
    return render("loss-branch", header, rows, fmt_kind)


def loss_bus_report(run: LmpRun, fmt_kind: str = "csv") -> str:
    """Per-bus loss factors, delivery factors and fictional nodal demand."""
    net, loss = run.net, run.loss
    header = ["bus", "lf_p", "lf_q", "df_p", "df_q", "fnd_p", "fnd_q"]
    rows = [
        [bus.id, loss.lf_p[i], loss.lf_q[i], loss.df_p[i], loss.df_q[i],
         loss.fnd_p[i], loss.fnd_q[i]]
        for i, bus in enumerate(net.buses)
    ]
    return render("loss-bus", header, rows, fmt_kind)


def summary_report(run: LmpRun, wall_time_s: float | None = None) -> str:
    """Run summary: system duals, losses, iteration trace.

    The wall-time line is a trailing comment and is excluded from the
    byte-stability contract; everything above it is deterministic.
    """
    net, res = run.net, run.result
    scale = 1.0 / net.base_mva
    lines = [f"# {FORMAT_TAG} summary"]
    lines.append(f"buses {net.n_bus}")
    lines.append(f"branches {net.n_branch}")
    lines.append(f"generators {len(net.generators)}")
    lines.append(f"lambda_p_per_mwh {fmt(res.duals.lambda_p * scale)}")
    lines.append(f"lambda_q_per_mwh {fmt(res.duals.lambda_q * scale)}")
    lines.append(f"p_loss_total {fmt(run.loss.p_loss_total)}")
    lines.append(f"q_loss_total {fmt(run.loss.q_loss_total)}")
    lines.append(f"objective {fmt(res.trace[-1].objective)}")
    lines.append(f"iterations {len(res.trace) - 1}")
    lines.append(f"binding_branches {int(np.sum(np.abs(res.duals.mu) > BINDING_TOL))}")
    lines.append(f"binding_voltages {int(np.sum(np.abs(res.duals.v) > BINDING_TOL))}")
    lines.append("trace iteration p_loss q_loss objective")
    for k, rec in enumerate(res.trace):
        lines.append(
            f"trace {k} {fmt(rec.p_loss)} {fmt(rec.q_loss)} {fmt(rec.objective)}"
        )
    if wall_time_s is not None:
        lines.append(f"# wall_time_s {wall_time_s:.3f}")
    return "\n".join(lines) + "\n"


def pf_bus_report(net: Network, pf: PfSolution, fmt_kind: str = "csv") -> str:
    header = ["bus", "v_mag", "v_ang_rad"]
    rows = [[bus.id, pf.v_mag[i], pf.v_ang[i]] for i, bus in enumerate(net.buses)]
    return render("pf-bus", header, rows, fmt_kind)


def pf_branch_report(net: Network, acf: AcBranchFlow, fmt_kind: str = "csv") -> str:
    header = ["branch", "from", "to", "p_from", "q_from", "p_to", "q_to",
              "p_loss", "q_loss"]
    rows = []
    for m, br in enumerate(net.branches):
        loss = acf.s_from[m] + acf.s_to[m]
        rows.append([
            m + 1, br.from_bus, br.to_bus,
            acf.s_from[m].real, acf.s_from[m].imag,
            acf.s_to[m].real, acf.s_to[m].imag,
            loss.real, loss.imag,
        ])
    return render("pf-branch", header, rows, fmt_kind)


def gsdf_report(net: Network, matrix: np.ndarray, name: str, fmt_kind: str = "csv") -> str:
    """One GSDF matrix: header row of bus ids, one row per branch."""
    header = ["branch"] + [str(bus.id) for bus in net.buses]
    rows = []
    for m, br in enumerate(net.branches):
        rows.append([f"{br.from_bus}-{br.to_bus}"] + list(matrix[m]))
    if fmt_kind == "csv":
        out = io.StringIO()
        out.write(f"# {FORMAT_TAG} {name}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [fmt(v) for v in row[1:]])
        return out.getvalue()
    return _render_table(name, header, rows)


def read_price_csv(path: str) -> tuple[list[int], np.ndarray]:
    """Read (bus id, ALMP) pairs from a CSV with tolerant column matching.

    Accepts any of bus/bus_id/busid/id for the bus column and
    almp_total/almp/lmp/price for the price column; comment lines starting
    with '#' are skipped.
    """
    bus_names = {"bus", "bus_id", "busid", "id"}
    almp_names = {"almp_total", "almp", "lmp", "price"}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise CaseParseError(f"{path}: empty price file")
    bus_col = next((i for i, h in enumerate(header) if h in bus_names), None)
    almp_col = next((i for i, h in enumerate(header) if h in almp_names), None)
    if bus_col is None or almp_col is None:
        raise CaseParseError(
            f"{path}: need a bus-id column ({sorted(bus_names)}) and an ALMP "
            f"column ({sorted(almp_names)}); found {header}"
        )
    ids, vals = [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            ids.append(int(float(row[bus_col])))
            vals.append(float(row[almp_col]))
        except (ValueError, IndexError):
            raise CaseParseError(f"{path}: malformed data row", line=lineno)
    return ids, np.array(vals)
