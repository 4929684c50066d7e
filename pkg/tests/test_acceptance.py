"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines as they are
produced; they are also collected in the "acceptance criteria" section of the
terminal summary.
"""
import json
import os
import random
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import GRID, TOPOLOGIES, load, random_tree_case, record_criterion
from flexmap import kernels
from flexmap.casefile import emit_case, parse_case, read_case
from flexmap.geometry import polygon_area
from flexmap.ipm import kkt_check
from flexmap.lifp import AggregationZone, build_lifp, compare_topologies, region_area
from flexmap.network import CLOSED, OPEN, Topology, apply_topology, check_radial
from flexmap.oracle import check_bracketing, refeasible
from flexmap.powerflow import branch_flows, mismatch, solve_newton
from flexmap.sampler import MAX, MIN, FlexProblem, QGrid, default_workers, sample_nfps, solve_slices

BUNDLED = ("case2", "case2_box", "case3_pinched", "case5", "case9_ring")


# 1 ---------------------------------------------------------------------------
def test_criterion_1_reference_network():
    """Needs external data: FLEXMAP_MVRURAL points at a JSON file

    ``{"case": "<file>.m", "zone": [ids] | "all",
    "topologies": {"unfavorable": {...}, "intermediate": {...}, "optimal": {...}}}``
    with the topologies in that order (relative paths resolve against the JSON file).
    """
    data_file = os.environ.get("FLEXMAP_MVRURAL")
    if not data_file:
        record_criterion(1, "WAIVED", "reference network and its topology vectors not supplied (FLEXMAP_MVRURAL)")
        pytest.skip("reference network data not supplied")
    path = Path(data_file)
    cfg = json.loads(path.read_text())
    case = read_case(path.parent / cfg["case"])
    topos = [(name, Topology({int(k): v for k, v in vec.items()})) for name, vec in cfg["topologies"].items()]
    zone = cfg.get("zone", "all")
    zone = AggregationZone.everything(apply_topology(case, topos[0][1])) if zone == "all" \
        else AggregationZone(tuple(zone))
    grid = QGrid(*cfg.get("q_span", (-0.3, 0.3)), cfg.get("q_count", 21))
    rep = compare_topologies(case, topos, zone, grid, workers=default_workers())
    norms = [r.normalized for r in rep.results]
    target = [1.00, 1.64, 2.73]
    imp = rep.improvement(topos[-1][0], topos[0][0])
    ok = (all(n is not None and abs(n - t) <= 0.1 * t for n, t in zip(norms, target))
          and imp is not None and abs(imp - 173) <= 15)
    record_criterion(1, ok, f"normalized {norms}, improvement {imp}")
    assert ok


# 2 ---------------------------------------------------------------------------
def test_criterion_2_oracle_bracketing():
    t0 = time.perf_counter()
    case = load("case5")
    buses = [b.id for b in case.buses if b.id != case.reference_bus.id]
    workers = default_workers()
    regions = sample_nfps(case, buses, GRID, workers=workers)
    reports = [check_bracketing(case, regions[b], offset=0.02, step=0.01, tol=1e-6, workers=workers)
               for b in buses]
    elapsed = time.perf_counter() - t0
    bad = sum(len(r.violations) for r in reports)
    complete = all(s.complete for r in regions.values() for s in r.samples)
    two_sided = all(r.two_sided for r in reports)
    ok = bad == 0 and complete and two_sided and elapsed < 300
    record_criterion(2, ok, f"case5 buses {buses}, |I|={GRID.count}, {sum(r.checked for r in reports)} probes, "
                            f"{bad} violations, {elapsed:.1f} s on {workers} worker(s)")
    assert ok, "\n".join(r.summary() for r in reports if r.violations)


# 3 ---------------------------------------------------------------------------
def test_criterion_3_singleton_equality(fixture_regions):
    pool = [(key, bus) for key, (_, regs) in fixture_regions.items() for bus in regs]
    picks = random.Random(3).sample(pool, 20)
    mismatches = []
    for key, bus in picks:
        nfp = fixture_regions[key][1][bus]
        lifp = build_lifp([nfp])
        _, lo, hi = nfp.bounds()
        if lifp.p_lo.tobytes() != lo.tobytes() or lifp.p_hi.tobytes() != hi.tobytes():
            mismatches.append((key, bus))
    ok = not mismatches
    record_criterion(3, ok, f"20 buses, {len(mismatches)} with differing slice bytes")
    assert ok, mismatches


# 4 ---------------------------------------------------------------------------
def test_criterion_4_subset_monotonicity(fixture_regions):
    rng = random.Random(4)
    failures = []
    pairs = 0
    for key, (_, regs) in fixture_regions.items():
        buses = sorted(regs)
        for _ in range(50):
            big = rng.sample(buses, rng.randint(2, len(buses)))
            small = rng.sample(big, rng.randint(1, len(big) - 1))
            l1, l2 = build_lifp([regs[b] for b in small]), build_lifp([regs[b] for b in big])
            pairs += 1
            for s1, s2 in zip(l1.slices, l2.slices):
                if s2 is not None and (s1 is None or s2[1] < s1[1] or s2[2] > s1[2]):
                    failures.append((key, small, big, "slice"))
                    break
            if region_area(l2) > region_area(l1) + 1e-12:
                failures.append((key, small, big, "area"))
    ok = not failures
    record_criterion(4, ok, f"{pairs} zone pairs over {len(fixture_regions)} fixture topologies, "
                            f"{len(failures)} failures")
    assert ok, failures[:5]


# 5 ---------------------------------------------------------------------------
def _fixture_cases():
    yield "case2", load("case2")
    yield "case2_box", load("case2_box")
    for cname, topos in TOPOLOGIES.items():
        for tname, vec in topos.items():
            yield f"{cname}/{tname}", apply_topology(load(cname), Topology(vec))


def test_criterion_5_solver_soundness():
    optimal = kkt_bad = pf_bad = 0
    worst_kkt = 0.0
    for name, case in _fixture_cases():
        buses = [b.id for b in case.buses if b.id != case.reference_bus.id]
        grid = QGrid(-0.19, 0.19, 21) if name == "case2_box" else GRID
        for bus in buses:
            for d in (MAX, MIN):
                for prob, res in solve_slices(case, bus, grid.values, d):
                    if not res.optimal:
                        continue
                    optimal += 1
                    k = kkt_check(prob, res.x, res.multipliers).max
                    worst_kkt = max(worst_kkt, k)
                    kkt_bad += k > 1e-6
                    rep = refeasible(case, bus, prob.to_operating_point(res.x), tol=1e-6)
                    pf_bad += not (rep["converged"] and rep["ok"])
    ok = optimal > 0 and kkt_bad == 0 and pf_bad == 0
    record_criterion(5, ok, f"{optimal} optimal NLP results, {kkt_bad} fail KKT (worst {worst_kkt:.1e}), "
                            f"{pf_bad} fail Newton refeasibility")
    assert ok


# 6 ---------------------------------------------------------------------------
def test_criterion_6_derivatives():
    rng = np.random.default_rng(6)
    m = 1000
    y = 1 / (rng.uniform(0.001, 0.1, m) + 1j * rng.uniform(0.001, 0.2, m))
    args = [rng.uniform(0.85, 1.15, m), rng.uniform(0.85, 1.15, m), rng.uniform(-0.5, 0.5, m),
            rng.uniform(-0.5, 0.5, m), y.real, y.imag, rng.uniform(0, 1e-3, m), rng.uniform(0, 5e-2, m)]
    _, grad = kernels.branch_jac(*args)
    h = 1e-6
    worst = 0.0
    for j in range(4):  # V_from, V_to, theta_from, theta_to
        up = [a.copy() for a in args]
        dn = [a.copy() for a in args]
        up[j] += h
        dn[j] -= h
        fd = (kernels.branch_flows(*up) - kernels.branch_flows(*dn)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(grad[:, :, j] - fd) / np.maximum(1.0, np.abs(fd)))))
    # the assembled NLP equality Jacobian at random points of the fixtures
    nlp_worst = 0.0
    for name in ("case5", "case9_ring"):
        prob = FlexProblem(load(name), 3, 0.05, MAX)
        for _ in range(5):
            x = prob.start_point() + rng.normal(0, 0.05, prob.n)
            J = prob.eq_jac(x).toarray()
            for j in range(prob.n):
                e = np.zeros(prob.n)
                e[j] = h
                fd = (prob.eq(x + e) - prob.eq(x - e)) / (2 * h)
                nlp_worst = max(nlp_worst, float(np.max(np.abs(J[:, j] - fd) / np.maximum(1.0, np.abs(fd)))))
    ok = worst <= 1e-6 and nlp_worst <= 1e-6
    record_criterion(6, ok, f"{m} random branch operating points, worst relative error {worst:.1e}; "
                            f"assembled NLP Jacobian worst {nlp_worst:.1e}")
    assert ok


# 7 ---------------------------------------------------------------------------
def test_criterion_7_conservation():
    rng = np.random.default_rng(7)
    worst_p = worst_q = 0.0
    min_loss = np.inf
    cases = [load(n) for n in ("case2", "case5", "case9_ring")]
    cases += [random_tree_case(int(rng.integers(2, 40)), rng) for _ in range(100)]
    for c in cases:
        pt = solve_newton(c)
        dp, dq = mismatch(c, pt)
        worst_p, worst_q = max(worst_p, abs(dp.sum())), max(worst_q, abs(dq.sum()))
        for f in branch_flows(c, pt):
            min_loss = min(min_loss, f.p_from + f.p_to)
    ok = worst_p <= 1e-8 and worst_q <= 1e-8 and min_loss >= -1e-10
    record_criterion(7, ok, f"{len(cases)} Newton solutions, |sum dP| <= {worst_p:.1e}, |sum dQ| <= {worst_q:.1e}, "
                            f"min branch loss {min_loss:.1e}")
    assert ok


# 8 ---------------------------------------------------------------------------
def test_criterion_8_geometry(fixture_regions):
    square = polygon_area([(0, 0), (1, 0), (1, 1), (0, 1)]) == 1.0
    empty_area = region_area(build_lifp([r for r in sample_nfps(load("case3_pinched"), [2, 3],
                                                                  QGrid(-0.1, 0.1, 3)).values()]))
    bad = []
    for key, (_, regs) in fixture_regions.items():
        lifp = build_lifp(regs.values())
        if region_area(lifp) > min(region_area(r) for r in regs.values()) + 1e-12:
            bad.append(key)
    ok = square and empty_area == 0.0 and not bad
    record_criterion(8, ok, f"unit square {'= 1' if square else '!= 1'}, empty area {empty_area}, "
                            f"{len(fixture_regions) - len(bad)}/{len(fixture_regions)} fixtures with "
                            f"area(LIFP) <= min NFP area")
    assert ok


# 9 ---------------------------------------------------------------------------
def test_criterion_9_parser_and_radiality():
    round_trip = True
    for name in BUNDLED:
        c = load(name)
        again = parse_case(emit_case(c))
        round_trip &= (again.buses == c.buses and again.loads == c.loads and again.generators == c.generators
                       and [(b.id, b.from_bus, b.to_bus, b.switch_state) for b in again.branches]
                       == [(b.id, b.from_bus, b.to_bus, b.switch_state) for b in c.branches])
    c5 = load("case5")
    status = [b.switch_state for b in c5.branches] == [CLOSED] * 4 + [OPEN]
    rng = np.random.default_rng(9)
    right = 0
    for _ in range(200):
        n = int(rng.integers(3, 60))
        seed = int(rng.integers(1 << 30))
        right += check_radial(random_tree_case(n, np.random.default_rng(seed))).radial
        right += not check_radial(random_tree_case(n, np.random.default_rng(seed), chord=True)).radial
    ok = round_trip and status and right == 400
    record_criterion(9, ok, f"round-trip {'ok' if round_trip else 'FAILED'} on {len(BUNDLED)} cases, status map "
                            f"{'ok' if status else 'FAILED'}, radiality {right}/400 correct")
    assert ok
