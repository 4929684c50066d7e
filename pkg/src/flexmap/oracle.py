"""Brute-force feasibility oracle for small cases.

A point ``(p, q)`` at the flex bus is probed by a plain Newton power flow:
every generator stays at its case setpoint except the first one at the
reference bus, which absorbs the imbalance.  The point is feasible when the
power flow converges and voltages, branch ratings and generator boxes all
hold within ``tol``.  This dispatch rule is narrower than the NLP, which
re-dispatches every generator, so in general only "oracle-feasible implies
inside the sampled region" can be asserted; with a single generator the two
feasible sets coincide.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import CaseError, NetworkCase
from .powerflow import OperatingPoint, PowerFlowDiverged, flow_array, solve_newton

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
DIVERGED = "pf-diverged"

MAX_BUSES = 30


class OracleGuardError(CaseError):
    pass


def _guard(case, limit=MAX_BUSES):
    if len(case.buses) > limit:
        raise OracleGuardError(f"oracle is limited to {limit} buses, case has {len(case.buses)}")


def violations(case: NetworkCase, pt: OperatingPoint) -> dict:
    """Largest violation of voltage limits, branch ratings and generator boxes (0 when satisfied)."""
    net = case.compiled
    v = pt.v_mag
    volt = max(float(np.max(net.v_min - v, initial=0.0)), float(np.max(v - net.v_max, initial=0.0)), 0.0)
    fl = flow_array(case, pt.v_mag, pt.v_ang)
    s_from = np.hypot(fl[:, 0], fl[:, 1])
    s_to = np.hypot(fl[:, 2], fl[:, 3])
    with np.errstate(invalid="ignore"):
        over = np.maximum(s_from, s_to) - net.rating
    rating = max(float(np.max(over[np.isfinite(over)], initial=0.0)), 0.0)
    gen = max(float(np.max(net.gen_pmin - pt.gen_p, initial=0.0)), float(np.max(pt.gen_p - net.gen_pmax, initial=0.0)),
              float(np.max(net.gen_qmin - pt.gen_q, initial=0.0)), float(np.max(pt.gen_q - net.gen_qmax, initial=0.0)),
              0.0)
    return {"voltage": volt, "rating": rating, "generator": gen}


def probe(case: NetworkCase, flex_bus, p, q, *, tol=1e-6, check_generators=True) -> str:
    """Verdict for flex injection ``(p, q)`` at ``flex_bus``."""
    _guard(case)
    if flex_bus not in case.compiled.index:
        raise CaseError(f"unknown flex bus {flex_bus}")
    fixed = OperatingPoint.flat(case, float(p), float(q))
    try:
        pt = solve_newton(case, fixed, flex_bus)
    except PowerFlowDiverged:
        return DIVERGED
    viol = violations(case, pt)
    if not check_generators:
        viol.pop("generator")
    return FEASIBLE if max(viol.values()) <= tol else INFEASIBLE


def _axis(lo, hi, step):
    n = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, max(n, 2))


@dataclass
class FeasibilityGrid:
    p_values: np.ndarray
    q_values: np.ndarray
    verdicts: np.ndarray  # shape (len(q_values), len(p_values)), dtype object

    @property
    def step(self) -> float:
        return float(self.p_values[1] - self.p_values[0])

    def feasible(self) -> np.ndarray:
        return self.verdicts == FEASIBLE

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "q", "verdict"])
        for i, q in enumerate(self.q_values):
            for j, p in enumerate(self.p_values):
                w.writerow([repr(float(p)), repr(float(q)), self.verdicts[i, j]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text) -> "FeasibilityGrid":
        rows = list(csv.DictReader(io.StringIO(text)))
        ps = sorted({float(r["p"]) for r in rows})
        qs = sorted({float(r["q"]) for r in rows})
        pi = {p: j for j, p in enumerate(ps)}
        qi = {q: i for i, q in enumerate(qs)}
        verdicts = np.empty((len(qs), len(ps)), dtype=object)
        for r in rows:
            verdicts[qi[float(r["q"])], pi[float(r["p"])]] = r["verdict"]
        return cls(np.array(ps), np.array(qs), verdicts)


def _probe_row(case, flex_bus, ps, q, tol):
    return [probe(case, flex_bus, p, q, tol=tol) for p in ps]


def sweep(case: NetworkCase, flex_bus, p_range, q_range, step, *, tol=1e-6, workers=1) -> FeasibilityGrid:
    """Probe every node of a regular grid over ``p_range`` x ``q_range`` (ends included)."""
    _guard(case)
    ps = _axis(*p_range, step)
    qs = _axis(*q_range, step)
    if workers <= 1:
        rows = [_probe_row(case, flex_bus, ps, q, tol) for q in qs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_probe_row, *zip(*[(case, flex_bus, ps, q, tol) for q in qs])))
    verdicts = np.array(rows, dtype=object).reshape(len(qs), len(ps))
    return FeasibilityGrid(ps, qs, verdicts)


def refeasible(case: NetworkCase, flex_bus, pt: OperatingPoint, *, tol=1e-6) -> dict:
    """Re-solve the power flow at an NLP optimum and report limit violations.

    All generators keep the NLP dispatch except the slack, the flex injection
    is fixed, and Newton starts from flat.  Generator boxes are not re-checked
    (the slack absorbs the NLP's residual mismatch, at most the solver tolerance).
    """
    fixed = OperatingPoint.flat(case, pt.flex_p, pt.flex_q)
    fixed = OperatingPoint(fixed.v_mag, fixed.v_ang, np.array(pt.gen_p, float), np.array(pt.gen_q, float),
                           pt.flex_p, pt.flex_q)
    try:
        sol = solve_newton(case, fixed, flex_bus)
    except PowerFlowDiverged as exc:
        return {"converged": False, "ok": False, "message": str(exc)}
    viol = violations(case, sol)
    viol.pop("generator")
    return {"converged": True, "ok": max(viol.values()) <= tol, **viol,
            "v_diff": float(np.abs(sol.v_mag - pt.v_mag).max())}


@dataclass
class Violation:
    kind: str
    q: float
    p: float
    verdict: str

    def __str__(self):
        return f"{self.kind}: p={self.p:.6f} q={self.q:.6f} oracle says {self.verdict}"


@dataclass
class BracketReport:
    flex_bus: int
    two_sided: bool
    checked: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        head = (f"bus {self.flex_bus}: {self.checked} oracle probes, {len(self.violations)} violations "
                f"({'two' if self.two_sided else 'one'}-sided)")
        return "\n".join([head] + [f"  {v}" for v in self.violations])


def _bracket_slice(case, flex_bus, q, p_up, p_down, offset, step, p_span, tol, two_sided):
    out = []
    n = 0
    if p_up is not None and p_down is not None:
        if two_sided:
            for p, kind in ((p_up, "upper vertex"), (p_down, "lower vertex")):
                n += 1
                v = probe(case, flex_bus, p, q, tol=tol)
                if v != FEASIBLE:
                    out.append(Violation(kind + " not feasible", q, p, v))
        for p, kind in ((p_up + offset, "beyond upper vertex"), (p_down - offset, "beyond lower vertex")):
            n += 1
            v = probe(case, flex_bus, p, q, tol=tol)
            if v == FEASIBLE:
                out.append(Violation(kind + " feasible", q, p, v))
    for p in _axis(*p_span, step):
        n += 1
        v = probe(case, flex_bus, p, q, tol=tol)
        inside = p_up is not None and p_down is not None and p_down - tol <= p <= p_up + tol
        if v == FEASIBLE and not inside:
            out.append(Violation("feasible point outside region", q, p, v))
        elif two_sided and v != FEASIBLE and inside and p_down + step <= p <= p_up - step:
            out.append(Violation("infeasible point inside region", q, p, v))
    return n, out


def check_bracketing(case: NetworkCase, region, *, offset=0.02, step=0.01, tol=1e-6, two_sided=None,
                     margin=0.1, workers=1) -> BracketReport:
    """Cross-check a sampled region against the oracle.

    At every sampled q: each vertex must be oracle-feasible (two-sided mode
    only), points ``offset`` beyond each vertex must be infeasible, and a
    p-sweep of spacing ``step`` must find no feasible point outside the
    interval.  Two-sided mode (default for single-generator cases) also
    flags infeasible sweep points well inside the interval.
    """
    _guard(case)
    if two_sided is None:
        two_sided = case.compiled.n_gen == 1
    _, lo, hi = region.bounds()
    finite = np.concatenate([lo[np.isfinite(lo)], hi[np.isfinite(hi)]])
    if finite.size:
        span = (float(finite.min()) - margin, float(finite.max()) + margin)
    else:
        span = (-1.0, 1.0)
    args = []
    for s in region.samples:
        both = s.complete
        args.append((case, region.flex_bus, s.q, s.p_up if both else None, s.p_down if both else None,
                     offset, step, span, tol, two_sided))
    if workers <= 1:
        parts = [_bracket_slice(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_bracket_slice, *zip(*args)))
    checked = sum(n for n, _ in parts)
    found = [v for _, vs in parts for v in vs]
    return BracketReport(region.flex_bus, two_sided, checked, found)
