"""Sparse primal-dual interior-point method for smooth NLPs with a linear objective.

Problem form::

    min  c @ x
    s.t. eq(x)   == 0
         ineq(x) <= 0
         lb <= x <= ub

Finite bounds are turned into extra linear inequality rows.  Inequalities
get slacks ``s > 0`` and the barrier subproblems are solved by Newton steps
on the primal-dual system, with a backtracking line search on the l1 merit
function ``c @ x - mu * sum(log s) + nu * ||(eq, ineq + s)||_1``.  The barrier
parameter follows the monotone (Fiacco-McCormick) rule.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL_FAILURE = "numerical-failure"


def _empty_jac(n):
    return lambda x: sp.csr_matrix((0, n))


@dataclass
class NlpProblem:
    """Callbacks describing one NLP.

    ``hess(x, y, z)`` returns the Hessian of ``y @ eq(x) + z @ ineq(x)``; the
    objective is linear so it contributes nothing.
    """

    n: int
    objective: np.ndarray
    eq: Callable = None
    eq_jac: Callable = None
    ineq: Callable = None
    ineq_jac: Callable = None
    hess: Callable = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.n
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.shape != (n,):
            raise ValueError(f"objective has shape {self.objective.shape}, expected ({n},)")
        if self.eq is None:
            self.eq, self.eq_jac = (lambda x: np.zeros(0)), _empty_jac(n)
        if self.ineq is None:
            self.ineq, self.ineq_jac = (lambda x: np.zeros(0)), _empty_jac(n)
        if self.hess is None:
            self.hess = lambda x, y, z: sp.csr_matrix((n, n))
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")

    @property
    def lb_idx(self):
        return np.flatnonzero(np.isfinite(self.lb))

    @property
    def ub_idx(self):
        return np.flatnonzero(np.isfinite(self.ub))


@dataclass
class NlpResult:
    status: str
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    y: np.ndarray = None       # equality multipliers
    z: np.ndarray = None       # inequality multipliers
    z_lb: np.ndarray = None    # lower-bound multipliers, length n
    z_ub: np.ndarray = None    # upper-bound multipliers, length n
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def multipliers(self):
        return self.y, self.z, self.z_lb, self.z_ub


@dataclass
class KKTResiduals:
    stationarity: float
    feasibility: float
    complementarity: float
    dual_infeasibility: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity, self.dual_infeasibility)


def _dual_scale(*mults, s_max=100.0):
    total = sum(np.abs(m).sum() for m in mults)
    count = sum(len(m) for m in mults)
    return max(s_max, total / max(count, 1)) / s_max


def kkt_check(problem: NlpProblem, x, multipliers) -> KKTResiduals:
    """First-order optimality residuals at ``x``, re-evaluated from the callbacks.

    ``multipliers`` is ``(y, z, z_lb, z_ub)`` as in :attr:`NlpResult.multipliers`.
    Stationarity is scaled by ``max(1, mean |multiplier| / 100)``.
    """
    y, z, z_lb, z_ub = (np.asarray(m, dtype=float) for m in multipliers)
    x = np.asarray(x, dtype=float)
    g = problem.eq(x)
    h = problem.ineq(x)
    grad = problem.objective + problem.eq_jac(x).T @ y + problem.ineq_jac(x).T @ z + z_ub - z_lb
    lo = np.where(np.isfinite(problem.lb), problem.lb - x, -np.inf)
    hi = np.where(np.isfinite(problem.ub), x - problem.ub, -np.inf)
    feas = max(np.abs(g).max(initial=0.0), h.max(initial=0.0), lo.max(initial=0.0), hi.max(initial=0.0), 0.0)
    with np.errstate(invalid="ignore"):
        comp_lb = np.where(np.isfinite(problem.lb), z_lb * (x - problem.lb), 0.0)
        comp_ub = np.where(np.isfinite(problem.ub), z_ub * (problem.ub - x), 0.0)
    comp = max(np.abs(z * h).max(initial=0.0), np.abs(comp_lb).max(initial=0.0), np.abs(comp_ub).max(initial=0.0))
    # multipliers of absent bounds must be zero
    stray = max(np.abs(z_lb[~np.isfinite(problem.lb)]).max(initial=0.0),
                np.abs(z_ub[~np.isfinite(problem.ub)]).max(initial=0.0))
    dual_inf = max(-z.min(initial=0.0), -z_lb.min(initial=0.0), -z_ub.min(initial=0.0), stray)
    stat = np.abs(grad).max(initial=0.0) / _dual_scale(y, z, z_lb, z_ub)
    return KKTResiduals(float(stat), float(feas), float(comp), float(dual_inf))


@dataclass
class IpmSettings:
    tol: float = 1e-8
    max_iter: int = 200
    mu_init: float = 0.1
    mu_min: float = 1e-11
    mu_factor: float = 0.2
    kappa_eps: float = 10.0
    tau: float = 0.995
    slack_push: float = 1e-2
    armijo: float = 1e-4
    max_backtracks: int = 40
    reg_init: float = 1e-8
    reg_factor: float = 10.0
    reg_max: float = 1e10
    reg_curv: float = 1e-4   # first regularization after a failed curvature test
    kappa_curv: float = 1e-10
    max_soc: int = 4
    stall_window: int = 10
    stall_feasible: float = 1e-5  # stalls below this are not evidence of infeasibility
    dense_limit: int = 400  # KKT systems up to this size use dense LU
    debug: bool = False


class _Stacked:
    """Problem inequalities plus finite bounds as rows ``H(x) <= 0``."""

    def __init__(self, problem: NlpProblem):
        self.p = problem
        n = problem.n
        self.lbi = problem.lb_idx
        self.ubi = problem.ub_idx
        self.m_ineq = len(problem.ineq(np.zeros(n))) if n else 0
        k_ub, k_lb = len(self.ubi), len(self.lbi)
        self.bound_jac = sp.vstack([
            sp.csr_matrix((np.ones(k_ub), (np.arange(k_ub), self.ubi)), shape=(k_ub, n)),
            sp.csr_matrix((-np.ones(k_lb), (np.arange(k_lb), self.lbi)), shape=(k_lb, n)),
        ]).tocsr()

    def value(self, x):
        p = self.p
        return np.concatenate([p.ineq(x), x[self.ubi] - p.ub[self.ubi], p.lb[self.lbi] - x[self.lbi]])

    def jac(self, x, dense=False):
        if dense:
            return np.vstack([_dense(self.p.ineq_jac(x)).reshape(self.m_ineq, self.p.n), self.bound_jac.toarray()])
        return sp.vstack([self.p.ineq_jac(x), self.bound_jac]).tocsr()

    def split(self, z_all):
        n = self.p.n
        z = z_all[: self.m_ineq]
        z_ub = np.zeros(n)
        z_lb = np.zeros(n)
        k_ub = len(self.ubi)
        z_ub[self.ubi] = z_all[self.m_ineq: self.m_ineq + k_ub]
        z_lb[self.lbi] = z_all[self.m_ineq + k_ub:]
        return z, z_lb, z_ub


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def _factor_solve(kkt, rhs):
    if sp.issparse(kkt):
        sol = spla.splu(kkt.tocsc()).solve(rhs)
    else:
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(str(exc)) from None
    if not np.all(np.isfinite(sol)):
        raise RuntimeError("non-finite KKT solution")
    return sol


def _corrected_step(problem, H, kkt, s, c_e, c_i, rhs_x, Jh, sigma, tau):
    """Step for the same KKT matrix with accumulated constraint residuals ``c_e``, ``c_i``."""
    n = problem.n
    # rhs_x carries -Jh' sigma (h + s) for the current point; swap in the corrected residual
    rx = rhs_x - Jh.T @ (sigma * c_i)
    try:
        sol = _factor_solve(kkt, np.concatenate([rx, -c_e]))
    except RuntimeError:
        return None
    sdx, sdy = sol[:n], sol[n:]
    sds = -c_i - Jh @ sdx
    neg = sds < 0
    a = min(1.0, np.min(-tau * s[neg] / sds[neg], initial=np.inf))
    return a, sdx, sdy, sds


def solve(problem: NlpProblem, start, settings: IpmSettings | None = None, iteration_log=None) -> NlpResult:
    """Run the interior-point method from ``start``.

    ``iteration_log`` may be a callable receiving one formatted line per
    iteration (mu, residuals, step sizes).  Infeasible, iteration-limit and
    numerical-failure outcomes are returned as statuses, never raised.
    """
    st = settings or IpmSettings()
    n = problem.n
    c = problem.objective
    H = _Stacked(problem)
    x = np.array(start, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"start has shape {x.shape}, expected ({n},)")
    # move the start inside the bounds where the box allows it
    lb, ub = problem.lb, problem.ub
    width = np.where(np.isfinite(ub - lb), ub - lb, np.inf)
    push = np.minimum(st.slack_push, 0.5 * width)
    x = np.clip(x, lb + push, ub - push)

    g = problem.eq(x)
    h = H.value(x)
    me, mi = len(g), len(h)
    s = np.maximum(-h, st.slack_push)
    mu = st.mu_init
    z = mu / s
    y = np.zeros(me)
    nu = 1.0
    reg = 0.0
    theta_hist = []
    status, message = ITERATION_LIMIT, f"no convergence in {st.max_iter} iterations"
    it = 0
    merit_prev = None

    def merit(x_, s_, g_, h_, mu_, nu_):
        return c @ x_ - mu_ * np.log(s_).sum() + nu_ * (np.abs(g_).sum() + np.abs(h_ + s_).sum())

    dense = n + me <= st.dense_limit
    while True:
        Jg = _dense(problem.eq_jac(x)).reshape(me, n) if dense else problem.eq_jac(x)
        Jh = H.jac(x, dense)
        r_d = c + Jg.T @ y + Jh.T @ z
        theta_inf = max(np.abs(g).max(initial=0.0), np.abs(h + s).max(initial=0.0))
        s_d = _dual_scale(y, z)
        s_c = max(100.0, z.sum() / max(mi, 1)) / 100.0
        err0 = max(np.abs(r_d).max(initial=0.0) / s_d, theta_inf, np.abs(s * z).max(initial=0.0) / s_c)
        if err0 <= st.tol:
            status, message = OPTIMAL, "converged"
            break
        if it >= st.max_iter:
            break
        err_mu = max(np.abs(r_d).max(initial=0.0) / s_d, theta_inf, np.abs(s * z - mu).max(initial=0.0) / s_c)
        while err_mu <= st.kappa_eps * mu and mu > st.mu_min:
            mu = max(st.mu_min, st.mu_factor * mu)
            err_mu = max(np.abs(r_d).max(initial=0.0) / s_d, theta_inf, np.abs(s * z - mu).max(initial=0.0) / s_c)
            merit_prev = None

        theta_hist.append(theta_inf)
        w = st.stall_window
        # stalled: no new record low (by 1%) of the primal infeasibility within the window
        if (theta_inf > st.tol and len(theta_hist) > w
                and min(theta_hist[-w:]) > 0.99 * min(theta_hist[:-w])):
            if theta_inf > st.stall_feasible:
                status, message = INFEASIBLE, f"primal infeasibility stalled at {theta_inf:.3e}"
            else:
                status, message = NUMERICAL_FAILURE, f"stalled near feasibility ({theta_inf:.3e})"
            break

        W = problem.hess(x, y, z[: H.m_ineq]) if H.m_ineq or me else sp.csr_matrix((n, n))
        sigma = z / s
        if dense:
            W = _dense(W)
            M = W + Jh.T @ (sigma[:, None] * Jh)
        else:
            M = (W + Jh.T @ sp.diags(sigma) @ Jh).tocsr()
        rhs_x = -(c + Jg.T @ y) - Jh.T @ (mu / s + sigma * (h + s))
        rhs = np.concatenate([rhs_x, -g])
        constraint_norm = np.abs(g).sum() + np.abs(h + s).sum()

        step = None
        reg_c = 0.0
        tried = 0
        while True:
            tried += 1
            if dense:
                kkt = np.block([[M + reg * np.eye(n), Jg.T], [Jg, -reg_c * np.eye(me)]])
            else:
                kkt = sp.bmat([[M + reg * sp.eye(n), Jg.T], [Jg, -reg_c * sp.eye(me) if me else None]],
                              format="csc") if me else (M + reg * sp.eye(n)).tocsc()
            try:
                sol = _factor_solve(kkt, rhs)
            except RuntimeError:
                reg = st.reg_init if reg == 0 else reg * st.reg_factor
                reg_c = st.reg_init
                if reg > st.reg_max:
                    break
                continue
            dx, dy = sol[:n], sol[n:]
            ds = -(h + s) - Jh @ dx
            dxx = dx @ dx
            curv = dx @ (M @ dx) + reg * dxx
            # inertia-free curvature test: the step must see positive curvature
            # on the linearized feasible directions, else regularize harder
            if curv < st.kappa_curv * dxx and dxx > 1e-28:
                reg = max(st.reg_curv, reg * st.reg_factor)
                reg_c = st.reg_init
                if reg > st.reg_max:
                    break
                continue
            grad_phi = c @ dx - mu * np.sum(ds / s)
            if constraint_norm > 1e-14:
                nu_trial = (grad_phi + 0.5 * max(curv, 0.0)) / (0.9 * constraint_norm)
                if nu_trial > nu:
                    nu = max(nu_trial, 2 * nu)
                    merit_prev = None
            D = grad_phi - nu * constraint_norm
            if D < 0 or np.abs(dx).max(initial=0.0) < 1e-14:
                step = (dx, dy, ds)
                break
            reg = st.reg_init if reg == 0 else reg * st.reg_factor
            if reg > st.reg_max:
                step = (dx, dy, ds)
                break
        if step is None:
            status, message = NUMERICAL_FAILURE, "KKT matrix singular after regularization"
            break
        dx, dy, ds = step
        dz = mu / s - z - sigma * ds

        neg = ds < 0
        alpha_p = min(1.0, np.min(-st.tau * s[neg] / ds[neg], initial=np.inf))
        neg = dz < 0
        alpha_d = min(1.0, np.min(-st.tau * z[neg] / dz[neg], initial=np.inf))

        phi0 = merit(x, s, g, h, mu, nu)
        # merit differences below rounding noise are not a reason to reject a step
        slop = 10 * np.finfo(float).eps * max(1.0, abs(phi0))
        alpha = alpha_p
        accepted = False
        x_try, s_try = x + alpha_p * dx, s + alpha_p * ds
        g_try, h_try = problem.eq(x_try), H.value(x_try)
        if not merit(x_try, s_try, g_try, h_try, mu, nu) <= phi0 + st.armijo * alpha_p * min(D, 0.0) + slop:
            # second-order corrections against the Maratos effect
            c_e, c_i, a_k = g, h + s, alpha_p
            viol = np.abs(g_try).sum() + np.abs(h_try + s_try).sum()
            base_x = rhs_x + Jh.T @ (sigma * (h + s))
            for _ in range(st.max_soc):
                c_e = a_k * c_e + g_try
                c_i = a_k * c_i + h_try + s_try
                soc = _corrected_step(problem, H, kkt, s, c_e, c_i, base_x, Jh, sigma, st.tau)
                if soc is None:
                    break
                a_k, sdx, sdy, sds = soc
                x_try, s_try = x + a_k * sdx, s + a_k * sds
                g_try, h_try = problem.eq(x_try), H.value(x_try)
                phi = merit(x_try, s_try, g_try, h_try, mu, nu)
                if np.isfinite(phi) and phi <= phi0 + st.armijo * a_k * min(D, 0.0) + slop:
                    accepted = True
                    x_new, s_new, g_new, h_new = x_try, s_try, g_try, h_try
                    alpha, dx, dy, ds = a_k, sdx, sdy, sds
                    dz = mu / s - z - sigma * ds
                    neg = dz < 0
                    alpha_d = min(1.0, np.min(-st.tau * z[neg] / dz[neg], initial=np.inf))
                    break
                v_new = np.abs(g_try).sum() + np.abs(h_try + s_try).sum()
                if v_new > 0.99 * viol:
                    break
                viol = v_new
        for _ in range(0 if accepted else st.max_backtracks):
            x_new = x + alpha * dx
            s_new = s + alpha * ds
            g_new = problem.eq(x_new)
            h_new = H.value(x_new)
            phi = merit(x_new, s_new, g_new, h_new, mu, nu)
            if np.isfinite(phi) and phi <= phi0 + st.armijo * alpha * min(D, 0.0) + slop:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if theta_inf > st.tol:
                status, message = INFEASIBLE, f"line search failed at primal infeasibility {theta_inf:.3e}"
            else:
                status, message = NUMERICAL_FAILURE, "line search failed"
            break
        if st.debug and merit_prev is not None:
            assert phi <= merit_prev + 1e-12 * max(1.0, abs(merit_prev)), "merit increased"
        merit_prev = phi

        x, s, g, h = x_new, s_new, g_new, h_new
        y = y + alpha_d * dy
        z = z + alpha_d * dz
        # keep z close to the central path (IPOPT-style safeguard)
        z = np.clip(z, mu / (1e10 * s), 1e10 * mu / s)
        if reg > 0:
            reg = max(st.reg_init, reg / 3) if reg > st.reg_init else 0.0
        it += 1
        line = (f"it={it:3d} mu={mu:.2e} obj={c @ x: .6e} inf_pr={theta_inf:.2e} err={err_mu:.2e} "
                f"nu={nu:.1e} reg={reg:.1e} a_p={alpha:.2e} a_d={alpha_d:.2e} merit={phi: .6e}")
        log.debug(line)
        if iteration_log is not None:
            iteration_log(line)
        if np.abs(x).max(initial=0.0) > 1e12:
            status, message = NUMERICAL_FAILURE, "iterates diverged"
            break

    z_ineq, z_lb, z_ub = H.split(z)
    res = kkt_check(problem, x, (y, z_ineq, z_lb, z_ub))
    if status == OPTIMAL and res.max > max(st.tol, 1e-6):
        status, message = NUMERICAL_FAILURE, f"independent KKT check failed ({res.max:.2e})"
    return NlpResult(status, x, float(c @ x), res.max, it, y, z_ineq, z_lb, z_ub, message)
