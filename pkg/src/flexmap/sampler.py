"""Boundary sampling of the nodal PQ flexibility region.

For a flex bus and a fixed reactive set-point ``q`` the largest and smallest
feasible real-power flex injection are found by two NLPs over the full AC
feasibility set (bus balances, branch-flow definitions, reference voltage,
voltage limits, thermal ratings, generator boxes).  Repeating this over a
uniform q-grid and stitching the results gives the polygonal region.

Sign convention: ``p``/``q`` of the flex bus enter the bus balance like a
generator, i.e. positive values offset local load.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .geometry import interval_at, polygon_area, slice_polygon
from .ipm import INFEASIBLE, OPTIMAL, IpmSettings, NlpProblem, NlpResult, solve
from .network import CaseError, NetworkCase
from .powerflow import OperatingPoint, PowerFlowDiverged, bus_injections, newton_raphson

log = logging.getLogger(__name__)

MAX, MIN = "max", "min"


class FlexError(CaseError):
    pass


@dataclass(frozen=True)
class QGrid:
    q_min: float
    q_max: float
    count: int = 21

    def __post_init__(self):
        if not self.count >= 2:
            raise ValueError(f"q-grid needs at least 2 points, got {self.count}")
        if not self.q_min < self.q_max:
            raise ValueError(f"q-grid needs q_min < q_max, got [{self.q_min}, {self.q_max}]")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.q_min, self.q_max, self.count)

    def to_dict(self):
        return {"q_min": self.q_min, "q_max": self.q_max, "count": self.count}


class FlexProblem(NlpProblem):
    """AC-Flex NLP on the energized part of a case, with its variable layout.

    Variables: ``[p_flex, (q_flex), P_gen, Q_gen, p_from, q_from, p_to, q_to,
    theta, V]``.  ``q_flex`` is a variable only when ``q_fixed is None``.
    """

    def __init__(self, case: NetworkCase, flex_bus, q_fixed, direction=MAX, target="p"):
        if direction not in (MAX, MIN):
            raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
        net = case.compiled
        if flex_bus not in net.index:
            raise FlexError(f"unknown flex bus {flex_bus}")
        k_flex_all = net.index[flex_bus]
        if not net.energized[k_flex_all]:
            raise FlexError(f"flex bus {flex_bus} is not connected to the reference bus under this topology")
        self.case, self.flex_bus, self.q_fixed, self.direction, self.target = case, flex_bus, q_fixed, direction, target

        buses = np.flatnonzero(net.energized)  # positions in case order
        local = -np.ones(net.n_bus, dtype=np.int64)
        local[buses] = np.arange(len(buses))
        self.buses = buses
        nb = len(buses)
        # closed branches always lie inside one component; keep those of the energized one
        br = np.flatnonzero(net.energized[net.f])
        m = len(br)
        f, t = local[net.f[br]], local[net.t[br]]
        gens = np.flatnonzero(net.energized[net.gen_bus])
        ng = len(gens)
        gbus = local[net.gen_bus[gens]]
        self.br, self.gens = br, gens
        self.f, self.t = f, t
        self.gbus = gbus
        self.g, self.b, self.gsh, self.bsh = net.g[br], net.b[br], net.gsh[br], net.bsh[br]
        rating = net.rating[br]
        self.rated = np.flatnonzero(np.isfinite(rating))
        self.rating = rating
        kf = local[k_flex_all]
        self.kf = kf
        ref = local[net.ref]

        q_free = q_fixed is None
        o = 0
        self.i_p = o
        o += 1
        self.i_q = o if q_free else None
        o += 1 if q_free else 0
        self.i_pg = np.arange(o, o + ng); o += ng
        self.i_qg = np.arange(o, o + ng); o += ng
        self.i_fl = np.arange(o, o + 4 * m).reshape(4, m); o += 4 * m  # rows: pf, qf, pt, qt
        self.i_th = np.arange(o, o + nb); o += nb
        self.i_v = np.arange(o, o + nb); o += nb
        n = o

        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        lb[self.i_v] = net.v_min[buses]
        ub[self.i_v] = net.v_max[buses]
        lb[self.i_pg], ub[self.i_pg] = net.gen_pmin[gens], net.gen_pmax[gens]
        lb[self.i_qg], ub[self.i_qg] = net.gen_qmin[gens], net.gen_qmax[gens]

        c = np.zeros(n)
        tgt = self.i_p if target == "p" else self.i_q
        if tgt is None:
            raise ValueError("target 'q' needs q_fixed=None")
        c[tgt] = -1.0 if direction == MAX else 1.0

        self.p_load = net.p_load[buses]
        self.q_load = net.q_load[buses]
        self.gs = net.g_shunt[buses]
        self.bs = net.b_shunt[buses]
        self.v_ref = net.v_ref
        self.ref = ref
        self.nb, self.m, self.ng = nb, m, ng

        # constant part of the equality Jacobian
        rows, cols, vals = [], [], []

        def add(r, cc, v):
            r, cc = np.broadcast_arrays(np.asarray(r), np.asarray(cc))
            rows.append(r.ravel()); cols.append(cc.ravel())
            vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape).ravel())

        # balance rows: P in 0..nb-1, Q in nb..2nb-1
        add(gbus, self.i_pg, 1.0)
        add(nb + gbus, self.i_qg, 1.0)
        add(f, self.i_fl[0], -1.0)
        add(nb + f, self.i_fl[1], -1.0)
        add(t, self.i_fl[2], -1.0)
        add(nb + t, self.i_fl[3], -1.0)
        add(kf, self.i_p, 1.0)
        if q_free:
            add(nb + kf, self.i_q, 1.0)
        # flow definition rows 2nb .. 2nb + 4m: flow variable minus flow expression
        self.r_flow = 2 * nb + np.arange(4 * m).reshape(4, m)
        add(self.r_flow, self.i_fl, 1.0)
        self.r_ref = 2 * nb + 4 * m
        add(self.r_ref, self.i_v[ref], 1.0)
        add(self.r_ref + 1, self.i_th[ref], 1.0)
        self.m_eq = self.r_ref + 2
        self._jc = (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
        # per-branch local variable columns (Vf, Vt, thf, tht) and flow rows
        self._loc = np.stack([self.i_v[f], self.i_v[t], self.i_th[f], self.i_th[t]], axis=1)
        self._frow = self.r_flow.T  # (m, 4)

        k = len(self.rated)
        self.m_ineq = 2 * k
        super().__init__(n=n, objective=c, eq=self._eq, eq_jac=self._eq_jac, ineq=self._ineq,
                         ineq_jac=self._ineq_jac, hess=self._hess, lb=lb, ub=ub)

    # -- callbacks -----------------------------------------------------------
    def _branch_args(self, x):
        v, th = x[self.i_v], x[self.i_th]
        return (v[self.f], v[self.t], th[self.f], th[self.t], self.g, self.b, self.gsh, self.bsh)

    def _eq(self, x):
        nb = self.nb
        v = x[self.i_v]
        res = np.zeros(self.m_eq)
        res[:nb] = -self.p_load - self.gs * v**2
        res[nb:2 * nb] = -self.q_load + self.bs * v**2
        pg, qg = x[self.i_pg], x[self.i_qg]
        gbus = self.gbus
        np.add.at(res[:nb], gbus, pg)
        np.add.at(res[nb:2 * nb], gbus, qg)
        fl = x[self.i_fl]  # (4, m)
        np.subtract.at(res[:nb], self.f, fl[0])
        np.subtract.at(res[nb:2 * nb], self.f, fl[1])
        np.subtract.at(res[:nb], self.t, fl[2])
        np.subtract.at(res[nb:2 * nb], self.t, fl[3])
        res[self.kf] += x[self.i_p]
        res[nb + self.kf] += x[self.i_q] if self.i_q is not None else self.q_fixed
        if self.m:
            flows = kernels.branch_flows(*self._branch_args(x))
            res[self.r_flow] = fl - flows.T
        res[self.r_ref] = x[self.i_v[self.ref]] - self.v_ref
        res[self.r_ref + 1] = x[self.i_th[self.ref]]
        return res

    def _eq_jac(self, x):
        r0, c0, v0 = self._jc
        nb = self.nb
        v = x[self.i_v]
        idx = np.arange(nb)
        rows = [r0, idx, nb + idx]
        cols = [c0, self.i_v, self.i_v]
        vals = [v0, -2 * self.gs * v, 2 * self.bs * v]
        if self.m:
            _, grad = kernels.branch_jac(*self._branch_args(x))  # (m, 4 flows, 4 vars)
            rows.append(np.repeat(self._frow[:, :, None], 4, axis=2).ravel())
            cols.append(np.repeat(self._loc[:, None, :], 4, axis=1).ravel())
            vals.append(-grad.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.m_eq, self.n))

    def _ineq(self, x):
        k = self.rated
        fl = x[self.i_fl]
        s2 = self.rating[k] ** 2
        return np.concatenate([fl[0, k] ** 2 + fl[1, k] ** 2 - s2, fl[2, k] ** 2 + fl[3, k] ** 2 - s2])

    def _ineq_jac(self, x):
        k = self.rated
        nk = len(k)
        fl = x[self.i_fl]
        r = np.concatenate([np.arange(nk)] * 2 + [nk + np.arange(nk)] * 2)
        c = np.concatenate([self.i_fl[0, k], self.i_fl[1, k], self.i_fl[2, k], self.i_fl[3, k]])
        v = 2 * np.concatenate([fl[0, k], fl[1, k], fl[2, k], fl[3, k]])
        return sp.csr_matrix((v, (r, c)), shape=(2 * nk, self.n))

    def _hess(self, x, y, z):
        nb, n = self.nb, self.n
        v = x[self.i_v]
        rows = [self.i_v]
        cols = [self.i_v]
        vals = [-2 * self.gs * y[:nb] + 2 * self.bs * y[nb:2 * nb]]
        if self.m:
            lam = -y[self.r_flow].T  # flow rows are "variable - expression"
            hb = kernels.branch_hess(*self._branch_args(x), np.ascontiguousarray(lam))
            rows.append(np.repeat(self._loc[:, :, None], 4, axis=2).ravel())
            cols.append(np.repeat(self._loc[:, None, :], 4, axis=1).ravel())
            vals.append(hb.ravel())
        k = self.rated
        nk = len(k)
        if nk:
            zf, zt = z[:nk], z[nk:]
            idx = np.concatenate([self.i_fl[0, k], self.i_fl[1, k], self.i_fl[2, k], self.i_fl[3, k]])
            rows.append(idx)
            cols.append(idx)
            vals.append(2 * np.concatenate([zf, zf, zt, zt]))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    # -- points ----------------------------------------------------------------
    def point_from(self, v, th, gen_p, gen_q, p_flex=0.0, q_flex=0.0):
        """Pack bus voltages (energized buses) and dispatch into a variable vector."""
        x = np.zeros(self.n)
        x[self.i_v], x[self.i_th] = v, th
        x[self.i_pg], x[self.i_qg] = gen_p, gen_q
        x[self.i_p] = p_flex
        if self.i_q is not None:
            x[self.i_q] = q_flex
        if self.m:
            x[self.i_fl] = kernels.branch_flows(*self._branch_args(x)).T
        return x

    def start_point(self) -> np.ndarray:
        """Power-flow solution with zero flex real power when it converges, flat start otherwise."""
        case, net = self.case, self.case.compiled
        q = 0.0 if self.q_fixed is None else self.q_fixed
        gp = np.clip(net.gen_pset, net.gen_pmin, net.gen_pmax)[self.gens]
        gq = np.clip(net.gen_qset, net.gen_qmin, net.gen_qmax)[self.gens]
        v = np.ones(self.nb)
        v[self.ref] = self.v_ref
        th = np.zeros(self.nb)
        if len(self.buses) == net.n_bus:
            pt = OperatingPoint(np.ones(net.n_bus), np.zeros(net.n_bus), net.gen_pset, net.gen_qset, 0.0, q)
            p_inj, q_inj = bus_injections(case, pt, self.flex_bus)
            try:
                vm, va, _ = newton_raphson(case, p_inj, q_inj)
                v, th = vm, va
            except (PowerFlowDiverged, CaseError):
                log.debug("start power flow failed at bus %s q=%s; flat start", self.flex_bus, q)
        return self.point_from(v, th, gp, gq, 0.0, q)

    def flex_value(self, x) -> float:
        return float(x[self.i_p])

    def to_operating_point(self, x) -> OperatingPoint:
        net = self.case.compiled
        v = np.ones(net.n_bus)
        th = np.zeros(net.n_bus)
        v[self.buses], th[self.buses] = x[self.i_v], x[self.i_th]
        gp = np.zeros(net.n_gen)
        gq = np.zeros(net.n_gen)
        gp[self.gens], gq[self.gens] = x[self.i_pg], x[self.i_qg]
        q = x[self.i_q] if self.i_q is not None else self.q_fixed
        return OperatingPoint(v, th, gp, gq, float(x[self.i_p]), float(q))


def assemble_flex_problem(case: NetworkCase, flex_bus, q_fixed, direction=MAX) -> FlexProblem:
    """AC-Flex-Max (``direction="max"``) or AC-Flex-Min at one bus for fixed flex ``q``."""
    return FlexProblem(case, flex_bus, float(q_fixed), direction)


@dataclass
class PQSample:
    q: float
    p_up: float | None = None
    p_down: float | None = None
    status_up: str = "unsolved"
    status_down: str = "unsolved"

    @property
    def complete(self) -> bool:
        return self.status_up == OPTIMAL and self.status_down == OPTIMAL


class _SliceRegion:
    """Shared behaviour of regions stored as one ``[lo, hi]`` interval per q-slice."""

    grid: QGrid

    def bounds(self):
        """Arrays ``(q, lo, hi)`` with NaN where the slice is absent."""
        raise NotImplementedError

    @property
    def polygon(self) -> np.ndarray:
        return slice_polygon(*self.bounds())

    @property
    def n_slices(self) -> int:
        _, lo, hi = self.bounds()
        return int(np.sum(np.isfinite(lo) & np.isfinite(hi)))

    @property
    def empty(self) -> bool:
        return self.n_slices == 0

    @property
    def degenerate(self) -> bool:
        """Fewer than three distinct polygon vertices: zero area by definition."""
        poly = self.polygon
        return len({tuple(p) for p in poly}) < 3

    @property
    def area(self) -> float:
        return 0.0 if self.degenerate else polygon_area(self.polygon)

    def contains(self, p, q) -> bool:
        iv = interval_at(*self.bounds(), q)
        return iv is not None and iv[0] <= p <= iv[1]


@dataclass
class NFPRegion(_SliceRegion):
    flex_bus: int
    grid: QGrid
    samples: list = field(default_factory=list)

    def bounds(self):
        q = np.array([s.q for s in self.samples], dtype=float)
        lo = np.array([s.p_down if s.complete else np.nan for s in self.samples], dtype=float)
        hi = np.array([s.p_up if s.complete else np.nan for s in self.samples], dtype=float)
        return q, lo, hi

    def to_dict(self, base_mva=None):
        d = {
            "flex_bus": self.flex_bus,
            "grid": self.grid.to_dict(),
            "samples": [vars(s).copy() for s in self.samples],
            "polygon": self.polygon.tolist(),
        }
        if base_mva is not None:
            d["base_mva"] = base_mva
            d["polygon_mw_mvar"] = (self.polygon * base_mva).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["flex_bus"], QGrid(**d["grid"]), [PQSample(**s) for s in d["samples"]])

    def to_json(self, base_mva=None) -> str:
        return json.dumps(self.to_dict(base_mva), indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_csv(self, base_mva=None) -> str:
        """One row per slice; per-unit columns, or MW/MVAr columns when ``base_mva`` is given."""
        k = 1.0 if base_mva is None else base_mva
        head = ["q", "p_up", "p_down"] if base_mva is None else ["q_mvar", "p_up_mw", "p_down_mw"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head + ["status_up", "status_down"])
        for s in self.samples:
            w.writerow([repr(s.q * k), "" if s.p_up is None else repr(s.p_up * k),
                        "" if s.p_down is None else repr(s.p_down * k), s.status_up, s.status_down])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, flex_bus, grid, base_mva=None):
        rows = list(csv.DictReader(io.StringIO(text)))
        physical = bool(rows) and "q_mvar" in rows[0]
        if physical and base_mva is None:
            raise ValueError("CSV is in MW/MVAr; base_mva is needed to read it")
        k = base_mva if physical else 1.0
        q, up, down = ("q_mvar", "p_up_mw", "p_down_mw") if physical else ("q", "p_up", "p_down")
        samples = [PQSample(float(r[q]) / k, float(r[up]) / k if r[up] else None,
                            float(r[down]) / k if r[down] else None, r["status_up"], r["status_down"])
                   for r in rows]
        return cls(flex_bus, grid, samples)


def _solve_flex(problem: FlexProblem, start, settings, multistart=1, seed=0) -> NlpResult:
    res = solve(problem, start, settings)
    if multistart > 1:
        rng = np.random.default_rng(seed)
        best = res
        for _ in range(multistart - 1):
            x0 = problem.start_point()
            lo, hi = problem.lb[problem.i_v], problem.ub[problem.i_v]
            v = rng.uniform(lo, hi)
            v[problem.ref] = problem.v_ref
            th = rng.uniform(-0.1, 0.1, problem.nb)
            th[problem.ref] = 0.0
            x0 = problem.point_from(v, th, x0[problem.i_pg], x0[problem.i_qg], 0.0, problem.q_fixed)
            cand = solve(problem, x0, settings)
            if cand.optimal and (not best.optimal or cand.objective < best.objective):
                best = cand
        res = best
    return res


def solve_slices(case, flex_bus, qs, direction, settings=None, warm_start=True, multistart=1):
    """Solve one direction for a run of q values, warm-starting each from the previous optimum.

    Returns ``[(FlexProblem, NlpResult)]`` in q order.
    """
    settings = settings or IpmSettings()
    out = []
    prev = None
    for q in qs:
        prob = FlexProblem(case, flex_bus, float(q), direction)
        start = prev if (warm_start and prev is not None) else prob.start_point()
        res = _solve_flex(prob, start, settings, multistart)
        if not res.optimal and prev is not None:
            # a warm start from a far-away optimum can fail where the power-flow start works
            retry = _solve_flex(prob, prob.start_point(), settings, multistart)
            if retry.optimal or res.status != INFEASIBLE:
                res = retry
        log.debug("bus %s q=%.5f %s: %s (%d it) p=%.6f", flex_bus, q, direction, res.status,
                  res.iterations, prob.flex_value(res.x))
        out.append((prob, res))
        prev = res.x if res.optimal else prev
    return out


def _solve_chain(case, flex_bus, qs, direction, settings, warm_start=True, multistart=1):
    return [(prob.flex_value(res.x) if res.optimal else None, res.status)
            for prob, res in solve_slices(case, flex_bus, qs, direction, settings, warm_start, multistart)]


def default_workers() -> int:
    return os.cpu_count() or 1


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [range(edges[i], edges[i + 1]) for i in range(parts) if edges[i] < edges[i + 1]]


def sample_nfps(case: NetworkCase, buses, grid: QGrid, *, settings: IpmSettings | None = None,
                workers=1, warm_start=True, multistart=1) -> dict:
    """Sample the regions of several buses on one q-grid; returns ``{bus: NFPRegion}``.

    Work is split into independent tasks (bus, direction, run of q indices).
    Within a task slices are warm-started in sequence; with more workers the
    runs get shorter, down to one slice per task.
    """
    settings = settings or IpmSettings()
    buses = list(buses)
    for bus in buses:
        FlexProblem(case, bus, 0.0)  # validates bus and connectivity up front
    qs = grid.values
    n_tasks_min = 2 * len(buses)
    split = 1 if workers <= 1 else max(1, -(-workers // n_tasks_min))
    tasks = [(bus, d, rng) for bus in buses for d in (MAX, MIN) for rng in _chunks(len(qs), split)]
    results = {}
    if workers <= 1:
        for bus, d, rng in tasks:
            results[(bus, d, rng.start)] = _solve_chain(case, bus, qs[rng.start:rng.stop], d, settings,
                                                        warm_start, multistart)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {(bus, d, rng.start): pool.submit(_solve_chain, case, bus, qs[rng.start:rng.stop], d,
                                                     settings, warm_start, multistart)
                    for bus, d, rng in tasks}
            results = {k: fut.result() for k, fut in futs.items()}
    regions = {}
    for bus in buses:
        samples = [PQSample(float(q)) for q in qs]
        for (b, d, start), vals in results.items():
            if b != bus:
                continue
            for off, (p, status) in enumerate(vals):
                s = samples[start + off]
                if d == MAX:
                    s.p_up, s.status_up = p, status
                else:
                    s.p_down, s.status_down = p, status
        regions[bus] = NFPRegion(bus, grid, samples)
    return regions


def sample_nfp(case: NetworkCase, flex_bus, grid: QGrid, **kw) -> NFPRegion:
    """Solve AC-Flex-Max and AC-Flex-Min at every q of ``grid`` (2 * count NLPs)."""
    return sample_nfps(case, [flex_bus], grid, **kw)[flex_bus]


def auto_qrange(case: NetworkCase, flex_bus, *, settings: IpmSettings | None = None, margin=1e-4):
    """Feasible span of flex ``q`` at a bus, from two NLPs with ``p`` free.

    The span is shrunk by ``margin`` at each end so the end slices stay feasible.
    """
    settings = settings or IpmSettings()
    ends = {}
    for d in (MAX, MIN):
        prob = FlexProblem(case, flex_bus, None, d, target="q")
        res = solve(prob, prob.start_point(), settings)
        if res.optimal:
            ends[d] = float(res.x[prob.i_q])
    if not ends:
        raise FlexError(f"no feasible flex operation at bus {flex_bus}")
    if len(ends) == 1:
        raise FlexError(f"could not bound flex q at bus {flex_bus} ({'max' if MIN in ends else 'min'} side failed)")
    lo, hi = ends[MIN] + margin, ends[MAX] - margin
    if not lo < hi:
        raise FlexError(f"flex q span at bus {flex_bus} is narrower than 2 * {margin}")
    return lo, hi
