import numpy as np
import pytest
import scipy.sparse as sp

from flexmap.ipm import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    IpmSettings,
    NlpProblem,
    kkt_check,
    solve,
)


def disc(radius2=2.0, lb=None, ub=None):
    """min x1 + x2 s.t. x1^2 + x2^2 <= radius2."""
    return NlpProblem(
        n=2, objective=np.array([1.0, 1.0]),
        ineq=lambda x: np.array([x @ x - radius2]),
        ineq_jac=lambda x: sp.csr_matrix(2 * x.reshape(1, 2)),
        hess=lambda x, y, z: sp.csr_matrix(2 * z[0] * np.eye(2)),
        lb=lb, ub=ub,
    )


def circle():
    """min x1 s.t. x1^2 + x2^2 == 1."""
    return NlpProblem(
        n=2, objective=np.array([1.0, 0.0]),
        eq=lambda x: np.array([x @ x - 1.0]),
        eq_jac=lambda x: sp.csr_matrix(2 * x.reshape(1, 2)),
        hess=lambda x, y, z: sp.csr_matrix(2 * y[0] * np.eye(2)),
    )


def lp():
    """min -x1 - 2 x2 s.t. x1 + x2 <= 4, 0 <= x <= 3."""
    a = sp.csr_matrix([[1.0, 1.0]])
    return NlpProblem(n=2, objective=np.array([-1.0, -2.0]),
                      ineq=lambda x: a @ x - 4.0, ineq_jac=lambda x: a,
                      lb=np.zeros(2), ub=np.full(2, 3.0))


def test_disc_minimum():
    res = solve(disc(), np.zeros(2))
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [-1.0, -1.0], atol=1e-7)
    assert res.objective == pytest.approx(-2.0, abs=1e-7)
    assert res.z[0] == pytest.approx(0.5, abs=1e-6)


def test_equality_constrained():
    res = solve(circle(), np.array([0.5, 0.5]))
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [-1.0, 0.0], atol=1e-6)
    assert res.y[0] == pytest.approx(0.5, abs=1e-6)


def test_linear_program_with_bounds():
    res = solve(lp(), np.array([0.5, 0.5]))
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [1.0, 3.0], atol=1e-7)
    assert res.z_ub[1] == pytest.approx(1.0, abs=1e-6)
    assert res.z_lb == pytest.approx(np.zeros(2), abs=1e-6)


def test_infeasible_is_reported_not_raised():
    res = solve(disc(1.0, lb=np.array([2.0, -np.inf])), np.array([2.5, 0.0]))
    assert res.status == INFEASIBLE
    assert not res.optimal


def test_iteration_limit():
    res = solve(disc(), np.zeros(2), IpmSettings(max_iter=2))
    assert res.status == ITERATION_LIMIT


def test_kkt_check_is_independent():
    p = disc()
    good = kkt_check(p, np.array([-1.0, -1.0]), (np.zeros(0), np.array([0.5]), np.zeros(2), np.zeros(2)))
    assert good.max < 1e-12
    off = kkt_check(p, np.array([-0.9, -1.0]), (np.zeros(0), np.array([0.5]), np.zeros(2), np.zeros(2)))
    assert off.stationarity > 0.05
    neg = kkt_check(p, np.array([-1.0, -1.0]), (np.zeros(0), np.array([-0.5]), np.zeros(2), np.zeros(2)))
    assert neg.dual_infeasibility == 0.5
    infeasible = kkt_check(p, np.array([-2.0, -2.0]), (np.zeros(0), np.array([0.25]), np.zeros(2), np.zeros(2)))
    assert infeasible.feasibility == pytest.approx(6.0)


def test_result_passes_kkt_check():
    for prob, x0 in ((disc(), np.zeros(2)), (circle(), np.array([0.5, 0.5])), (lp(), np.array([1.0, 1.0]))):
        res = solve(prob, x0)
        assert kkt_check(prob, res.x, res.multipliers).max <= 1e-6


def test_deterministic():
    a = solve(disc(), np.array([0.3, -0.2]))
    b = solve(disc(), np.array([0.3, -0.2]))
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_sparse_and_dense_kkt_agree():
    a = solve(disc(), np.zeros(2))
    b = solve(disc(), np.zeros(2), IpmSettings(dense_limit=0))
    np.testing.assert_allclose(a.x, b.x, atol=1e-9)


def test_debug_mode_checks_merit_and_logs():
    lines = []
    res = solve(disc(), np.zeros(2), IpmSettings(debug=True), iteration_log=lines.append)
    assert res.optimal
    assert len(lines) == res.iterations and lines[0].startswith("it=  1")


def test_bad_start_shape():
    with pytest.raises(ValueError):
        solve(disc(), np.zeros(3))


def test_problem_validation():
    with pytest.raises(ValueError):
        NlpProblem(n=2, objective=np.zeros(3))
    with pytest.raises(ValueError):
        NlpProblem(n=1, objective=np.zeros(1), lb=np.ones(1), ub=np.zeros(1))
