"""Zone aggregation of nodal regions and topology comparison.

The aggregated region of a zone is the set of flex operating points that
every zone bus can deliver on its own.  Because every nodal region is stored
as one ``[p_down, p_up]`` interval per q-slice of a shared grid, the
intersection is taken slice by slice, which is exact for the polygonal
approximations and needs no general polygon clipping.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import polygon_area
from .ipm import IpmSettings
from .network import CaseError, NetworkCase, Topology, apply_topology, check_radial
from .sampler import NFPRegion, QGrid, _SliceRegion, sample_nfps


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class AggregationZone:
    buses: tuple
    name: str = "zone"

    def __post_init__(self):
        buses = tuple(int(b) for b in self.buses)
        if not buses:
            raise AggregationError("aggregation zone is empty")
        if len(set(buses)) != len(buses):
            raise AggregationError(f"aggregation zone repeats buses: {list(buses)}")
        object.__setattr__(self, "buses", buses)

    def check(self, case: NetworkCase):
        known = {b.id for b in case.buses}
        missing = [b for b in self.buses if b not in known]
        if missing:
            raise CaseError(f"zone {self.name!r} names unknown buses {missing}")

    @classmethod
    def everything(cls, case: NetworkCase, name="all") -> "AggregationZone":
        """Every energized bus except the reference bus."""
        net = case.compiled
        ids = [int(b) for k, b in enumerate(net.bus_ids) if net.energized[k] and k != net.ref]
        return cls(tuple(ids), name)


@dataclass
class LIFPRegion(_SliceRegion):
    zone: AggregationZone
    grid: QGrid
    p_lo: np.ndarray
    p_hi: np.ndarray
    members: dict = field(default_factory=dict, repr=False)

    def bounds(self):
        return self.grid.values, self.p_lo, self.p_hi

    @property
    def slices(self) -> list:
        """Per-q ``(q, p_lo, p_hi)``, ``None`` where the slice is absent."""
        return [None if np.isnan(lo) else (float(q), float(lo), float(hi))
                for q, lo, hi in zip(*self.bounds())]

    def to_dict(self, base_mva=None):
        d = {
            "zone": list(self.zone.buses),
            "zone_name": self.zone.name,
            "grid": self.grid.to_dict(),
            "p_lo": [None if np.isnan(v) else float(v) for v in self.p_lo],
            "p_hi": [None if np.isnan(v) else float(v) for v in self.p_hi],
            "polygon": self.polygon.tolist(),
        }
        if base_mva is not None:
            d["base_mva"] = base_mva
            d["polygon_mw_mvar"] = (self.polygon * base_mva).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        arr = lambda xs: np.array([np.nan if v is None else v for v in xs], dtype=float)  # noqa: E731
        return cls(AggregationZone(tuple(d["zone"]), d.get("zone_name", "zone")), QGrid(**d["grid"]),
                   arr(d["p_lo"]), arr(d["p_hi"]))

    def to_json(self, base_mva=None) -> str:
        return json.dumps(self.to_dict(base_mva), indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_csv(self, base_mva=None) -> str:
        k = 1.0 if base_mva is None else base_mva
        fmt = lambda v: "" if np.isnan(v) else repr(float(v) * k)  # noqa: E731
        lines = ["q,p_lo,p_hi" if base_mva is None else "q_mvar,p_lo_mw,p_hi_mw"]
        for q, lo, hi in zip(*self.bounds()):
            lines.append(f"{fmt(q)},{fmt(lo)},{fmt(hi)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text, zone: AggregationZone, grid: QGrid, base_mva=None):
        lines = text.strip().splitlines()
        physical = lines[0].startswith("q_mvar")
        if physical and base_mva is None:
            raise ValueError("CSV is in MW/MVAr; base_mva is needed to read it")
        k = base_mva if physical else 1.0
        rows = [ln.split(",") for ln in lines[1:]]
        lo = np.array([float(r[1]) / k if r[1] else np.nan for r in rows])
        hi = np.array([float(r[2]) / k if r[2] else np.nan for r in rows])
        return cls(zone, grid, lo, hi)


def build_lifp(nfps, name="zone") -> LIFPRegion:
    """Slice-wise intersection of regions sampled on one shared q-grid."""
    nfps = list(nfps)
    if not nfps:
        raise AggregationError("cannot aggregate an empty list of regions")
    grid = nfps[0].grid
    ref = grid.values
    for r in nfps[1:]:
        if r.grid != grid or not np.array_equal(r.grid.values, ref):
            raise AggregationError(f"bus {r.flex_bus} was sampled on {r.grid}, expected {grid}")
    lo = np.full(len(ref), -np.inf)
    hi = np.full(len(ref), np.inf)
    for r in nfps:
        _, rlo, rhi = r.bounds()
        # np.maximum propagates NaN, so a slice missing in any member stays missing
        lo = np.maximum(lo, rlo)
        hi = np.minimum(hi, rhi)
    gone = np.isnan(lo) | np.isnan(hi) | (lo > hi)
    lo[gone] = np.nan
    hi[gone] = np.nan
    zone = AggregationZone(tuple(r.flex_bus for r in nfps), name)
    return LIFPRegion(zone, grid, lo, hi, {r.flex_bus: r for r in nfps})


def region_area(region) -> float:
    """Shoelace area in p.u.^2; 0 for empty or degenerate regions, error when self-intersecting."""
    if region.degenerate:
        return 0.0
    return polygon_area(region.polygon)


def membership(region, p, q) -> bool:
    return region.contains(p, q)


@dataclass
class TopologyResult:
    name: str
    lifp: LIFPRegion
    area: float
    normalized: float | None = None
    nfp_areas: dict = field(default_factory=dict)


@dataclass
class ComparisonReport:
    zone: AggregationZone
    grid: QGrid
    base: str
    results: list
    base_mva: float = 1.0

    def __post_init__(self):
        base_area = self[self.base].area
        for r in self.results:
            r.normalized = r.area / base_area if base_area > 0 else None

    def __getitem__(self, name) -> TopologyResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def names(self):
        return [r.name for r in self.results]

    def improvement(self, better, worse) -> float | None:
        """``(A_better / A_worse - 1) * 100``; ``None`` when ``A_worse`` is 0."""
        a_j, a_i = self[better].area, self[worse].area
        return (a_j / a_i - 1.0) * 100.0 if a_i > 0 else None

    def improvements(self) -> dict:
        return {f"{j}/{i}": self.improvement(j, i) for j in self.names for i in self.names if i != j}

    def to_dict(self):
        rows = []
        prev = None
        for r in self.results:
            rows.append({
                "topology": r.name,
                "area_pu2": r.area,
                "area_mw_mvar": r.area * self.base_mva ** 2,
                "normalized": r.normalized,
                "improvement_over_previous_pct": None if prev is None else self.improvement(r.name, prev),
                "slices": r.lifp.n_slices,
                "nfp_areas_pu2": {str(k): v for k, v in r.nfp_areas.items()},
            })
            prev = r.name
        return {"zone": list(self.zone.buses), "zone_name": self.zone.name, "grid": self.grid.to_dict(),
                "base": self.base, "topologies": rows, "improvements_pct": self.improvements()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def table(self) -> str:
        fmt = lambda v, spec: "n/a" if v is None else format(v, spec)  # noqa: E731
        width = max(8, *(len(n) for n in self.names))
        lines = [f"zone {self.zone.name} ({len(self.zone.buses)} buses), normalized to {self.base}",
                 f"{'topology':<{width}}  {'area [MW*MVAr]':>14}  {'normalized':>10}  {'vs previous':>11}"]
        prev = None
        for r in self.results:
            imp = None if prev is None else self.improvement(r.name, prev)
            lines.append(f"{r.name:<{width}}  {r.area * self.base_mva ** 2:>14.4f}  {fmt(r.normalized, '>10.2f')}  "
                         f"{'-' if prev is None else fmt(imp, '>+10.1f') + '%':>11}")
            prev = r.name
        return "\n".join(lines)


def radial_cases(case: NetworkCase, topologies) -> dict:
    """Apply every named topology; raise :class:`CaseError` naming the first non-radial one."""
    out = {}
    for name, topo in topologies:
        c = apply_topology(case, topo) if topo is not None else case
        rep = check_radial(c)
        if rep.cycles:
            raise CaseError(f"topology {name!r} is not radial:\n{rep}")
        out[name] = c
    return out


def compare_zones(case: NetworkCase, topologies, zones, grid: QGrid, *, base=None,
                  settings: IpmSettings | None = None, workers=1, **kw) -> dict:
    """Comparison reports for several zones, sampling each bus once per topology."""
    topologies = list(topologies)
    if not topologies:
        raise AggregationError("no topologies to compare")
    names = [n for n, _ in topologies]
    if len(set(names)) != len(names):
        raise AggregationError(f"duplicate topology names: {names}")
    base = names[0] if base is None else base
    if base not in names:
        raise AggregationError(f"normalization base {base!r} is not a listed topology")
    cases = radial_cases(case, topologies)
    buses = sorted({b for z in zones for b in z.buses})
    per_zone = {z.name: [] for z in zones}
    for name in names:
        nfps = sample_nfps(cases[name], buses, grid, settings=settings, workers=workers, **kw)
        for z in zones:
            members = [nfps[b] for b in z.buses]
            lifp = build_lifp(members, z.name)
            per_zone[z.name].append(TopologyResult(name, lifp, region_area(lifp),
                                                   nfp_areas={b: region_area(nfps[b]) for b in z.buses}))
    return {z.name: ComparisonReport(z, grid, base, per_zone[z.name], case.base_mva) for z in zones}


def compare_topologies(case: NetworkCase, topologies, zone: AggregationZone, grid: QGrid, **kw) -> ComparisonReport:
    """Aggregated area of ``zone`` under each named topology, normalized to the first (or ``base``)."""
    zone.check(case)
    return compare_zones(case, topologies, [zone], grid, **kw)[zone.name]
