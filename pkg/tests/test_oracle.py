import dataclasses

import numpy as np
import pytest

from conftest import load, random_tree_case
from flexmap.ipm import solve
from flexmap.oracle import (
    FEASIBLE,
    INFEASIBLE,
    FeasibilityGrid,
    OracleGuardError,
    check_bracketing,
    probe,
    refeasible,
    sweep,
)
from flexmap.sampler import MAX, FlexProblem, PQSample, QGrid, sample_nfp


def test_probe_verdicts():
    c = load("case2")
    assert probe(c, 2, 0.0, 0.0) == FEASIBLE
    # 12 MW export over the 10 MVA line
    assert probe(c, 2, 1.2, 0.0) == INFEASIBLE
    assert probe(c, 2, 50.0, 0.0) == "pf-diverged"


def test_probe_unknown_bus():
    with pytest.raises(Exception, match="unknown flex bus 9"):
        probe(load("case5"), 9, 0.0, 0.0)


def test_guard_refuses_large_cases():
    big = random_tree_case(31, np.random.default_rng(0))
    with pytest.raises(OracleGuardError, match="30 buses"):
        probe(big, 2, 0.0, 0.0)
    with pytest.raises(OracleGuardError):
        sweep(big, 2, (0, 0.1), (0, 0.1), 0.05)


def test_box_case_is_symmetric_in_q():
    grid = sweep(load("case2_box"), 2, (-0.3, 0.3), (-0.3, 0.3), 0.03)
    feas = grid.feasible()
    assert feas.sum() == 169
    assert np.array_equal(feas, feas[::-1, :])


def test_pinched_case_has_no_feasible_point():
    grid = sweep(load("case3_pinched"), 2, (-0.2, 0.2), (-0.2, 0.2), 0.05)
    assert not grid.feasible().any()


def test_grid_csv_round_trip():
    grid = sweep(load("case2_box"), 2, (-0.3, 0.3), (-0.1, 0.1), 0.1)
    again = FeasibilityGrid.from_csv(grid.to_csv())
    np.testing.assert_allclose(again.p_values, grid.p_values)
    np.testing.assert_allclose(again.q_values, grid.q_values)
    assert np.array_equal(again.verdicts, grid.verdicts)
    assert again.step == pytest.approx(0.1)


def test_parallel_sweep_matches_serial():
    c = load("case5")
    a = sweep(c, 4, (-0.3, 0.3), (-0.1, 0.1), 0.1)
    b = sweep(c, 4, (-0.3, 0.3), (-0.1, 0.1), 0.1, workers=2)
    assert np.array_equal(a.verdicts, b.verdicts)


def test_bracketing_two_bus():
    c = load("case2")
    region = sample_nfp(c, 2, QGrid(-0.3, 0.3, 5))
    rep = check_bracketing(c, region)
    assert rep.two_sided and rep.ok, rep.summary()
    assert rep.checked > 5 * 4


def test_bracketing_detects_shrunk_and_grown_regions():
    c = load("case2")
    region = sample_nfp(c, 2, QGrid(-0.3, 0.3, 5))
    shrunk = dataclasses.replace(region, samples=[
        PQSample(s.q, s.p_up - 0.05, s.p_down, s.status_up, s.status_down) for s in region.samples])
    rep = check_bracketing(c, shrunk)
    assert not rep.ok
    assert {v.kind for v in rep.violations} >= {"beyond upper vertex feasible", "feasible point outside region"}
    grown = dataclasses.replace(region, samples=[
        PQSample(s.q, s.p_up + 0.05, s.p_down, s.status_up, s.status_down) for s in region.samples])
    kinds = {v.kind for v in check_bracketing(c, grown).violations}
    assert "upper vertex not feasible" in kinds and "infeasible point inside region" in kinds
    assert "violations" in check_bracketing(c, grown).summary()


def test_refeasible_at_an_optimum():
    c = load("case5")
    prob = FlexProblem(c, 4, 0.05, MAX)
    res = solve(prob, prob.start_point())
    rep = refeasible(c, 4, prob.to_operating_point(res.x))
    assert rep["converged"] and rep["ok"]
    assert rep["v_diff"] < 1e-6
