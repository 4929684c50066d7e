"""Network data model: buses, branches, generators, loads and switch states.

All electrical quantities are stored in per-unit on ``base_mva``.  A
``NetworkCase`` is immutable; topology changes produce a new case through
:func:`apply_topology`.
"""
from __future__ import annotations

import dataclasses
import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

REFERENCE = "reference"
PQ = "pq"
CLOSED = "closed"
OPEN = "open"

DEFAULT_VMIN = 0.95
DEFAULT_VMAX = 1.05


class CaseError(ValueError):
    """Invalid network data (dangling ids, bad bases, bad topology...)."""


@dataclass(frozen=True)
class Bus:
    id: int
    role: str = PQ
    v_min: float = DEFAULT_VMIN
    v_max: float = DEFAULT_VMAX
    v_ref_setpoint: float = 1.0
    # bus shunt at V = 1 p.u.; zero for all bundled cases
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    base_kv: float = 0.0

    def __post_init__(self):
        if self.role not in (REFERENCE, PQ):
            raise CaseError(f"bus {self.id}: unknown role {self.role!r}")
        if not 0.0 < self.v_min <= self.v_max:
            raise CaseError(f"bus {self.id}: need 0 < v_min <= v_max, got {self.v_min}, {self.v_max}")
        if self.role == REFERENCE and not self.v_min <= self.v_ref_setpoint <= self.v_max:
            raise CaseError(f"bus {self.id}: reference setpoint {self.v_ref_setpoint} outside voltage limits")


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    conductance: float
    susceptance: float
    shunt_conductance: float = 0.0
    shunt_susceptance: float = 0.0
    rating: float = float("inf")
    switch_state: str = CLOSED
    switchable: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CaseError(f"branch {self.id}: from_bus == to_bus == {self.from_bus}")
        if not self.rating > 0:
            raise CaseError(f"branch {self.id}: rating must be positive, got {self.rating}")
        if self.switch_state not in (CLOSED, OPEN):
            raise CaseError(f"branch {self.id}: unknown switch state {self.switch_state!r}")

    @property
    def closed(self) -> bool:
        return self.switch_state == CLOSED

    @classmethod
    def from_impedance(cls, id, from_bus, to_bus, r, x, charging=0.0, **kw):
        """Build a branch from series r + jx and total line charging (split half per end)."""
        z = complex(r, x)
        if z == 0:
            raise CaseError(f"branch {id}: zero series impedance")
        y = 1.0 / z
        return cls(id, from_bus, to_bus, y.real, y.imag, 0.0, charging / 2.0, **kw)


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_min: float = -np.inf
    p_max: float = np.inf
    q_min: float = -np.inf
    q_max: float = np.inf
    p_set: float = 0.0
    q_set: float = 0.0

    def __post_init__(self):
        if self.p_min > self.p_max or self.q_min > self.q_max:
            raise CaseError(f"generator {self.id}: inverted limits")


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    p: float
    q: float

    def __post_init__(self):
        if not (np.isfinite(self.p) and np.isfinite(self.q)):
            raise CaseError(f"load {self.id}: non-finite demand")


@dataclass(frozen=True)
class Topology:
    """Switch vector ``z``: branch id -> ``"closed"``/``"open"``."""

    switch_vector: dict = field(default_factory=dict)

    def __post_init__(self):
        vec = {}
        for key, val in dict(self.switch_vector).items():
            if val in (CLOSED, OPEN):
                vec[int(key)] = val
            elif val in (0, 1, True, False):
                vec[int(key)] = CLOSED if val else OPEN
            else:
                raise CaseError(f"topology: branch {key} state must be 0 or 1, got {val!r}")
        object.__setattr__(self, "switch_vector", vec)

    @classmethod
    def from_json(cls, source) -> "Topology":
        """Read ``{branch_id: 0|1}`` from a path or a JSON string."""
        path = Path(source) if not str(source).lstrip().startswith("{") else None
        raw = json.loads(path.read_text() if path is not None else source)
        if not isinstance(raw, dict) or any(isinstance(v, str) for v in raw.values()):
            raise CaseError("topology file must map branch ids to 0 or 1")
        return cls(raw)

    def to_json(self) -> str:
        return json.dumps({str(k): int(v == CLOSED) for k, v in sorted(self.switch_vector.items())},
                          indent=1)


@dataclass(frozen=True)
class CompiledNetwork:
    """Array view of a case used by the numeric code.

    Only closed branches appear in the branch arrays; bus arrays follow
    ``case.buses`` order.
    """

    bus_ids: np.ndarray
    index: dict
    ref: int
    v_min: np.ndarray
    v_max: np.ndarray
    v_ref: float
    p_load: np.ndarray
    q_load: np.ndarray
    g_shunt: np.ndarray
    b_shunt: np.ndarray
    branch_ids: np.ndarray
    f: np.ndarray
    t: np.ndarray
    g: np.ndarray
    b: np.ndarray
    gsh: np.ndarray
    bsh: np.ndarray
    rating: np.ndarray
    gen_bus: np.ndarray
    gen_pmin: np.ndarray
    gen_pmax: np.ndarray
    gen_qmin: np.ndarray
    gen_qmax: np.ndarray
    gen_pset: np.ndarray
    gen_qset: np.ndarray
    energized: np.ndarray

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_branch(self) -> int:
        return len(self.f)

    @property
    def n_gen(self) -> int:
        return len(self.gen_bus)


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    base_voltage_kv: float
    buses: tuple
    branches: tuple
    generators: tuple = ()
    loads: tuple = ()
    name: str = "case"

    def __post_init__(self):
        for attr in ("buses", "branches", "generators", "loads"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if not self.base_mva > 0:
            raise CaseError(f"non-positive base_mva {self.base_mva}")
        if not self.base_voltage_kv > 0:
            raise CaseError(f"non-positive base voltage {self.base_voltage_kv} kV")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        refs = [b.id for b in self.buses if b.role == REFERENCE]
        if len(refs) != 1:
            raise CaseError(f"need exactly one reference bus, found {len(refs)}")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise CaseError(f"branch {br.id} refers to unknown bus {end}")
        for gen in self.generators:
            if gen.bus not in known:
                raise CaseError(f"generator {gen.id} refers to unknown bus {gen.bus}")
        for load in self.loads:
            if load.bus not in known:
                raise CaseError(f"load {load.id} refers to unknown bus {load.bus}")
        br_ids = [br.id for br in self.branches]
        if len(set(br_ids)) != len(br_ids):
            raise CaseError("duplicate branch ids")

    @property
    def reference_bus(self) -> Bus:
        return next(b for b in self.buses if b.role == REFERENCE)

    def bus(self, bus_id) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise CaseError(f"unknown bus {bus_id}")

    def branch(self, branch_id) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise CaseError(f"unknown branch {branch_id}")

    @property
    def topology(self) -> Topology:
        return Topology({br.id: br.switch_state for br in self.branches if br.switchable})

    @cached_property
    def compiled(self) -> CompiledNetwork:
        return _compile(self)


def _compile(case: NetworkCase) -> CompiledNetwork:
    bus_ids = np.array([b.id for b in case.buses], dtype=np.int64)
    index = {int(b): i for i, b in enumerate(bus_ids)}
    nb = len(bus_ids)
    p_load = np.zeros(nb)
    q_load = np.zeros(nb)
    for load in case.loads:
        p_load[index[load.bus]] += load.p
        q_load[index[load.bus]] += load.q
    closed = [br for br in case.branches if br.closed]
    ref_bus = case.reference_bus
    ref = index[ref_bus.id]

    f = np.array([index[br.from_bus] for br in closed], dtype=np.int64)
    t = np.array([index[br.to_bus] for br in closed], dtype=np.int64)
    gens = case.generators

    # energized component: buses reachable from the reference through closed branches
    adj = defaultdict(list)
    for i, j in zip(f, t):
        adj[i].append(j)
        adj[j].append(i)
    energized = np.zeros(nb, dtype=bool)
    stack = [ref]
    energized[ref] = True
    while stack:
        i = stack.pop()
        for j in adj[i]:
            if not energized[j]:
                energized[j] = True
                stack.append(j)

    return CompiledNetwork(
        bus_ids=bus_ids,
        index=index,
        ref=ref,
        v_min=np.array([b.v_min for b in case.buses]),
        v_max=np.array([b.v_max for b in case.buses]),
        v_ref=ref_bus.v_ref_setpoint,
        p_load=p_load,
        q_load=q_load,
        g_shunt=np.array([b.g_shunt for b in case.buses]),
        b_shunt=np.array([b.b_shunt for b in case.buses]),
        branch_ids=np.array([br.id for br in closed], dtype=np.int64),
        f=f,
        t=t,
        g=np.array([br.conductance for br in closed], dtype=float),
        b=np.array([br.susceptance for br in closed], dtype=float),
        gsh=np.array([br.shunt_conductance for br in closed], dtype=float),
        bsh=np.array([br.shunt_susceptance for br in closed], dtype=float),
        rating=np.array([br.rating for br in closed], dtype=float),
        gen_bus=np.array([index[g.bus] for g in gens], dtype=np.int64),
        gen_pmin=np.array([g.p_min for g in gens], dtype=float),
        gen_pmax=np.array([g.p_max for g in gens], dtype=float),
        gen_qmin=np.array([g.q_min for g in gens], dtype=float),
        gen_qmax=np.array([g.q_max for g in gens], dtype=float),
        gen_pset=np.array([g.p_set for g in gens], dtype=float),
        gen_qset=np.array([g.q_set for g in gens], dtype=float),
        energized=energized,
    )


def apply_topology(case: NetworkCase, topo: Topology) -> NetworkCase:
    """Return a copy of ``case`` with switch states taken from ``topo``.

    ``topo`` must cover exactly the switchable branches.  Open branches stay
    in the data model; they are skipped when equations are assembled.
    """
    by_id = {br.id: br for br in case.branches}
    for bid in topo.switch_vector:
        if bid not in by_id:
            raise CaseError(f"topology refers to unknown branch {bid}")
        if not by_id[bid].switchable:
            raise CaseError(f"topology assigns a state to non-switchable branch {bid}")
    missing = sorted(br.id for br in case.branches if br.switchable and br.id not in topo.switch_vector)
    if missing:
        raise CaseError(f"topology does not cover switchable branches {missing}")
    branches = [
        dataclasses.replace(br, switch_state=topo.switch_vector[br.id]) if br.switchable else br
        for br in case.branches
    ]
    return dataclasses.replace(case, branches=tuple(branches))


@dataclass
class RadialityReport:
    radial: bool
    connected: bool
    n_closed: int
    n_buses: int
    cycles: list = field(default_factory=list)
    disconnected: list = field(default_factory=list)

    def __str__(self):
        if self.radial:
            return f"radial: {self.n_closed} closed branches span {self.n_buses} buses"
        lines = ["not radial:"]
        for cyc in self.cycles:
            lines.append("  cycle through branches " + ", ".join(map(str, cyc)))
        if self.disconnected:
            lines.append("  disconnected buses " + ", ".join(map(str, self.disconnected)))
        return "\n".join(lines)


def check_radial(case: NetworkCase) -> RadialityReport:
    """Check that the closed branches form a spanning tree rooted at the reference bus.

    Every cycle found while building a spanning forest is reported as the list
    of branch ids along it.  Parallel closed branches count as a cycle.
    """
    ids = [b.id for b in case.buses]
    parent = {i: None for i in ids}  # tree edge to parent: (parent bus, branch id)
    depth = {}
    adj = defaultdict(list)
    closed = [br for br in case.branches if br.closed]
    for br in closed:
        adj[br.from_bus].append((br.to_bus, br.id))
        adj[br.to_bus].append((br.from_bus, br.id))

    cycles = []
    seen_edges = set()
    for root in [case.reference_bus.id] + ids:
        if root in depth:
            continue
        depth[root] = 0
        stack = [root]
        while stack:
            u = stack.pop()
            for v, bid in adj[u]:
                if bid in seen_edges:
                    continue
                seen_edges.add(bid)
                if v in depth:
                    cycles.append(_cycle_path(u, v, bid, parent, depth))
                else:
                    depth[v] = depth[u] + 1
                    parent[v] = (u, bid)
                    stack.append(v)

    # buses not reachable from the reference bus
    ref = case.reference_bus.id
    reach = {ref}
    stack = [ref]
    while stack:
        u = stack.pop()
        for v, _ in adj[u]:
            if v not in reach:
                reach.add(v)
                stack.append(v)
    disconnected = [i for i in ids if i not in reach]
    connected = not disconnected
    n_energized = len(reach)
    n_closed_energized = sum(1 for br in closed if br.from_bus in reach)
    radial = connected and not cycles and n_closed_energized == n_energized - 1
    return RadialityReport(radial, connected, len(closed), len(ids), cycles, disconnected)


def _cycle_path(u, v, bid, parent, depth):
    left, right = [], []
    a, b = u, v
    while a != b:
        if depth[a] >= depth[b]:
            pa, pb = parent[a]
            left.append(pb)
            a = pa
        else:
            pa, pb = parent[b]
            right.append(pb)
            b = pa
    return left + [bid] + right[::-1]
