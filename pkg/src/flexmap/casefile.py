"""MATPOWER-style case files: reader and writer.

Recognised fields are ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen``,
``mpc.branch`` and the optional extension ``mpc.switchable`` (a list of
1-based branch row numbers that may be switched; default: every branch).
Branch ids are 1-based row numbers of ``mpc.branch``.  Loads come from the
bus PD/QD columns.  Out-of-service generators are dropped.
"""
from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .network import (
    CLOSED,
    DEFAULT_VMAX,
    DEFAULT_VMIN,
    OPEN,
    PQ,
    REFERENCE,
    Branch,
    Bus,
    CaseError,
    Generator,
    Load,
    NetworkCase,
)

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?(?:Inf|inf|NaN|nan)")


class CaseSyntaxError(CaseError):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _strip_comments(text):
    out = []
    for line in text.splitlines():
        # keep column positions: blank the comment instead of cutting
        cut = line.find("%")
        out.append(line if cut < 0 else line[:cut] + " " * (len(line) - cut))
    return "\n".join(out)


def _position(text, offset):
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _parse_matrix(text, start, name):
    """Parse ``[ ... ];`` starting at ``text[start] == '['``; return rows and end offset."""
    end = text.find("]", start)
    if end < 0:
        raise CaseSyntaxError(f"unterminated matrix for mpc.{name}", *_position(text, start))
    rows, row = [], []
    pos = start + 1
    while pos < end:
        ch = text[pos]
        if ch in " \t\r,":
            pos += 1
            continue
        if ch in ";\n":
            if row:
                rows.append(row)
                row = []
            pos += 1
            continue
        m = _NUMBER.match(text, pos)
        if not m or m.end() > end:
            bad = re.match(r"\S+", text[pos:end]).group(0)
            raise CaseSyntaxError(f"invalid number {bad!r} in mpc.{name}", *_position(text, pos))
        row.append(float(m.group(0)))
        pos = m.end()
    if row:
        rows.append(row)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise CaseSyntaxError(f"ragged rows in mpc.{name}", *_position(text, start))
    return rows, end + 1


def _tokenize(text):
    text = _strip_comments(text)
    fields = {}
    for m in _ASSIGN.finditer(text):
        name = m.group(1)
        pos = m.end()
        if pos < len(text) and text[pos] == "[":
            rows, _ = _parse_matrix(text, pos, name)
            fields[name] = rows
        else:
            stop = text.find(";", pos)
            stop = len(text) if stop < 0 else stop
            raw = text[pos:stop].strip()
            if raw.startswith("'") or raw.startswith('"'):
                fields[name] = raw.strip("'\"")
                continue
            try:
                fields[name] = float(raw)
            except ValueError:
                raise CaseSyntaxError(f"cannot parse value {raw!r} of mpc.{name}", *_position(text, pos)) from None
    return fields


def _need(fields, name, min_cols):
    if name not in fields:
        raise CaseError(f"case has no mpc.{name}")
    rows = fields[name]
    if not isinstance(rows, list):
        raise CaseError(f"mpc.{name} must be a matrix")
    if rows and len(rows[0]) < min_cols:
        raise CaseError(f"mpc.{name} needs at least {min_cols} columns, got {len(rows[0])}")
    return rows


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse MATPOWER case text into a per-unit :class:`NetworkCase`."""
    fields = _tokenize(text)
    if "baseMVA" not in fields:
        raise CaseError("case has no mpc.baseMVA")
    base = fields["baseMVA"]
    if not isinstance(base, float) or not base > 0:
        raise CaseError(f"non-positive base: baseMVA = {base}")
    bus_rows = _need(fields, "bus", 13)
    gen_rows = _need(fields, "gen", 10) if "gen" in fields else []
    br_rows = _need(fields, "branch", 11)

    bus_ids = [int(r[0]) for r in bus_rows]
    known = set(bus_ids)
    refs = [int(r[0]) for r in bus_rows if int(r[1]) == 3]
    if not refs:
        raise CaseError("missing reference bus (no bus of type 3)")
    if len(refs) > 1:
        raise CaseError(f"multiple reference buses {refs}")

    gens = []
    for k, r in enumerate(gen_rows, start=1):
        if int(r[0]) not in known:
            raise CaseError(f"generator row {k} refers to unknown bus {int(r[0])}")
        if r[7] <= 0:
            continue
        gens.append(Generator(
            id=len(gens) + 1, bus=int(r[0]),
            p_min=r[9] / base, p_max=r[8] / base,
            q_min=r[4] / base, q_max=r[3] / base,
            p_set=r[1] / base, q_set=r[2] / base,
        ))
    ref_gen_rows = [r for r in gen_rows if int(r[0]) == refs[0] and r[7] > 0]

    buses, loads = [], []
    for r in bus_rows:
        bid, btype = int(r[0]), int(r[1])
        vmax = r[11] if r[11] > 0 else DEFAULT_VMAX
        vmin = r[12] if r[12] > 0 else DEFAULT_VMIN
        role = REFERENCE if btype == 3 else PQ
        vset = ref_gen_rows[0][5] if (role == REFERENCE and ref_gen_rows) else r[7]
        buses.append(Bus(bid, role, vmin, vmax, vset if role == REFERENCE else 1.0,
                         g_shunt=r[4] / base, b_shunt=r[5] / base, base_kv=r[9]))
        if r[2] != 0 or r[3] != 0:
            loads.append(Load(bid, bid, r[2] / base, r[3] / base))

    n_br = len(br_rows)
    switchable = None
    if "switchable" in fields:
        raw = fields["switchable"]
        flat = [v for row in raw for v in row] if isinstance(raw, list) else [raw]
        switchable = {int(v) for v in flat}
        bad = sorted(s for s in switchable if not 1 <= s <= n_br)
        if bad:
            raise CaseError(f"mpc.switchable refers to unknown branches {bad}")

    branches = []
    for k, r in enumerate(br_rows, start=1):
        fb, tb = int(r[0]), int(r[1])
        for end in (fb, tb):
            if end not in known:
                raise CaseError(f"branch {k} refers to unknown bus {end}")
        tap = r[8] if len(r) > 8 else 0.0
        shift = r[9] if len(r) > 9 else 0.0
        if tap not in (0.0, 1.0) or shift != 0.0:
            raise CaseError(f"branch {k}: off-nominal tap ({tap}) / phase shift ({shift}) not supported")
        rate = r[5] / base if r[5] > 0 else math.inf
        branches.append(Branch.from_impedance(
            k, fb, tb, r[2], r[3], r[4],
            rating=rate,
            switch_state=CLOSED if r[10] > 0 else OPEN,
            switchable=True if switchable is None else k in switchable,
        ))

    kv = next(r[9] for r in bus_rows if int(r[0]) == refs[0])
    if not kv > 0:
        raise CaseError(f"non-positive base: BASE_KV = {kv} at reference bus {refs[0]}")
    header = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
    return NetworkCase(base, kv, buses, branches, gens, loads, name=header.group(1) if header else name)


def read_case(path) -> NetworkCase:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseError(f"cannot read case file {path}: {exc.strerror}") from None
    return parse_case(text, name=path.stem)


def _fmt(v):
    if math.isinf(v):
        return "Inf" if v > 0 else "-Inf"
    return repr(float(v))


def emit_case(case: NetworkCase) -> str:
    """Write ``case`` as MATPOWER text that :func:`parse_case` reads back identically.

    Branch admittances are converted back to r + jx; bus VM/VA are written as
    the flat profile.  Branch ids must be 1..n in order for an exact round trip.
    """
    base = case.base_mva
    load_p = {b.id: 0.0 for b in case.buses}
    load_q = dict(load_p)
    for load in case.loads:
        load_p[load.bus] += load.p
        load_q[load.bus] += load.q
    ref = case.reference_bus.id
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "",
           "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in case.buses:
        btype = 3 if b.role == REFERENCE else 1
        vm = b.v_ref_setpoint if b.role == REFERENCE else 1.0
        kv = b.base_kv if b.base_kv > 0 else case.base_voltage_kv
        vals = [b.id, btype, load_p[b.id] * base, load_q[b.id] * base, b.g_shunt * base,
                b.b_shunt * base, 1, vm, 0, kv, 1, b.v_max, b.v_min]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for g in case.generators:
        vg = case.reference_bus.v_ref_setpoint if g.bus == ref else 1.0
        vals = [g.bus, g.p_set * base, g.q_set * base, g.q_max * base, g.q_min * base, vg, base, 1,
                g.p_max * base, g.p_min * base]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax", "mpc.branch = ["]
    for br in case.branches:
        z = 1.0 / complex(br.conductance, br.susceptance)
        rate = 0.0 if math.isinf(br.rating) else br.rating * base
        vals = [br.from_bus, br.to_bus, z.real, z.imag, 2.0 * br.shunt_susceptance, rate, rate, rate,
                0, 0, 1 if br.closed else 0, -360, 360]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out.append("];")
    if not all(br.switchable for br in case.branches):
        ids = " ".join(str(br.id) for br in case.branches if br.switchable)
        out += ["", f"mpc.switchable = [{ids}];"]
    return "\n".join(out) + "\n"


def case_totals(case: NetworkCase) -> dict:
    """Total load and generation setpoints in MW / MVAr."""
    base = case.base_mva
    return {
        "load_mw": base * float(np.sum([l.p for l in case.loads])),
        "load_mvar": base * float(np.sum([l.q for l in case.loads])),
        "gen_mw": base * float(np.sum([g.p_set for g in case.generators])),
    }
