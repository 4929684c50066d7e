"""AC power-flow equations, analytic Jacobian and Newton-Raphson power flow.

Sign conventions: ``mismatch`` is injection minus withdrawal at every bus.
Generators and the flex injection add, loads and branch flows leaving the
bus subtract.  A positive ``flex_p`` therefore offsets local load.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .network import CaseError, NetworkCase

log = logging.getLogger(__name__)

DENSE_LIMIT = 300


class PowerFlowDiverged(RuntimeError):
    def __init__(self, message, residual=np.inf, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularJacobian(PowerFlowDiverged):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    v_mag: np.ndarray
    v_ang: np.ndarray
    gen_p: np.ndarray
    gen_q: np.ndarray
    flex_p: float = 0.0
    flex_q: float = 0.0

    @classmethod
    def flat(cls, case: NetworkCase, flex_p=0.0, flex_q=0.0) -> "OperatingPoint":
        """Flat voltages (reference at its setpoint), generators at their setpoints."""
        net = case.compiled
        v = np.ones(net.n_bus)
        v[net.ref] = net.v_ref
        return cls(v, np.zeros(net.n_bus), net.gen_pset.copy(), net.gen_qset.copy(), flex_p, flex_q)


class BranchFlow(NamedTuple):
    branch: int
    p_from: float
    q_from: float
    p_to: float
    q_to: float


def _check_point(case, pt):
    net = case.compiled
    if len(pt.v_mag) != net.n_bus or len(pt.v_ang) != net.n_bus:
        raise ValueError(f"operating point has {len(pt.v_mag)} voltages, case has {net.n_bus} buses")
    if len(pt.gen_p) != net.n_gen or len(pt.gen_q) != net.n_gen:
        raise ValueError(f"operating point has {len(pt.gen_p)} generators, case has {net.n_gen}")


def flow_array(case: NetworkCase, v_mag, v_ang) -> np.ndarray:
    """Flows ``(p_from, q_from, p_to, q_to)`` of the closed branches, shape ``(m, 4)``."""
    net = case.compiled
    v_mag = np.asarray(v_mag, dtype=float)
    v_ang = np.asarray(v_ang, dtype=float)
    return kernels.branch_flows(v_mag[net.f], v_mag[net.t], v_ang[net.f], v_ang[net.t],
                                net.g, net.b, net.gsh, net.bsh)


def branch_flows(case: NetworkCase, pt: OperatingPoint) -> list[BranchFlow]:
    """Flows of every branch in case order; open branches carry zero flow."""
    _check_point(case, pt)
    net = case.compiled
    arr = flow_array(case, pt.v_mag, pt.v_ang)
    row = {int(bid): k for k, bid in enumerate(net.branch_ids)}
    out = []
    for br in case.branches:
        k = row.get(br.id)
        out.append(BranchFlow(br.id, 0.0, 0.0, 0.0, 0.0) if k is None else BranchFlow(br.id, *map(float, arr[k])))
    return out


def _flex_index(case, flex_bus):
    if flex_bus is None:
        return None
    try:
        return case.compiled.index[flex_bus]
    except KeyError:
        raise CaseError(f"unknown flex bus {flex_bus}") from None


def bus_injections(case: NetworkCase, pt: OperatingPoint, flex_bus=None):
    """Specified net injection per bus: generators - loads + flex."""
    net = case.compiled
    p = -net.p_load.copy()
    q = -net.q_load.copy()
    np.add.at(p, net.gen_bus, pt.gen_p)
    np.add.at(q, net.gen_bus, pt.gen_q)
    k = _flex_index(case, flex_bus)
    if k is not None:
        p[k] += pt.flex_p
        q[k] += pt.flex_q
    return p, q


def _bus_mismatch(net, vm, va, p_inj, q_inj):
    flows = kernels.branch_flows(vm[net.f], vm[net.t], va[net.f], va[net.t], net.g, net.b, net.gsh, net.bsh)
    dp = p_inj - net.g_shunt * vm**2
    dq = q_inj + net.b_shunt * vm**2
    np.subtract.at(dp, net.f, flows[:, 0])
    np.subtract.at(dq, net.f, flows[:, 1])
    np.subtract.at(dp, net.t, flows[:, 2])
    np.subtract.at(dq, net.t, flows[:, 3])
    return dp, dq


def mismatch(case: NetworkCase, pt: OperatingPoint, flex_bus=None):
    """Per-bus active and reactive power balance residuals ``(dP, dQ)``."""
    _check_point(case, pt)
    p, q = bus_injections(case, pt, flex_bus)
    return _bus_mismatch(case.compiled, np.asarray(pt.v_mag, float), np.asarray(pt.v_ang, float), p, q)


def jacobian(case: NetworkCase, pt: OperatingPoint) -> sp.csr_matrix:
    """Sparse Jacobian of ``(dP, dQ)`` (stacked) w.r.t. ``(v_ang, v_mag)`` (stacked)."""
    _check_point(case, pt)
    net = case.compiled
    nb = net.n_bus
    vm = np.asarray(pt.v_mag, float)
    va = np.asarray(pt.v_ang, float)
    _, grad = kernels.branch_jac(vm[net.f], vm[net.t], va[net.f], va[net.t], net.g, net.b, net.gsh, net.bsh)
    f, t = net.f, net.t
    rows = np.stack([f, nb + f, t, nb + t], axis=1)
    cols = np.stack([nb + f, nb + t, f, t], axis=1)
    r = np.repeat(rows[:, :, None], 4, axis=2).ravel()
    c = np.repeat(cols[:, None, :], 4, axis=1).ravel()
    idx = np.arange(nb)
    r = np.concatenate([r, idx, nb + idx])
    c = np.concatenate([c, nb + idx, nb + idx])
    data = np.concatenate([-grad.ravel(), -2 * net.g_shunt * vm, 2 * net.b_shunt * vm])
    return sp.csr_matrix((data, (r, c)), shape=(2 * nb, 2 * nb))


def newton_raphson(case: NetworkCase, p_inj, q_inj, v0=None, a0=None, *, tol=1e-8, max_iter=30, max_halvings=8):
    """Solve the bus balance for fixed injections at every non-reference bus.

    The reference bus holds its voltage setpoint and zero angle; its own
    balance is left open (the slack).  Returns ``(v_mag, v_ang, iterations)``.
    Converged when the 1-norm of the mismatch is at most ``tol``.
    Damped: a step that increases the residual is halved up to ``max_halvings`` times.
    """
    net = case.compiled
    nb = net.n_bus
    if not net.energized.all():
        off = net.bus_ids[~net.energized].tolist()
        raise CaseError(f"buses {off} are not connected to the reference bus")
    vm = np.ones(nb) if v0 is None else np.array(v0, dtype=float)
    va = np.zeros(nb) if a0 is None else np.array(a0, dtype=float)
    vm[net.ref] = net.v_ref
    va[net.ref] = 0.0
    p_inj = np.asarray(p_inj, float)
    q_inj = np.asarray(q_inj, float)
    keep = np.ones(2 * nb, dtype=bool)
    keep[[net.ref, nb + net.ref]] = False
    dense = nb <= DENSE_LIMIT

    def system(vm, va, with_jac=True):
        if dense:
            mis, jac = kernels.dense_pf(net.f, net.t, net.g, net.b, net.gsh, net.bsh, vm, va,
                                       p_inj, q_inj, net.g_shunt, net.b_shunt)
            return mis[keep], (jac[np.ix_(keep, keep)] if with_jac else None)
        dp, dq = _bus_mismatch(net, vm, va, p_inj, q_inj)
        mis = np.concatenate([dp, dq])[keep]
        if not with_jac:
            return mis, None
        jac = jacobian(case, OperatingPoint(vm, va, net.gen_pset, net.gen_qset))
        return mis, jac[keep][:, keep].tocsc()

    mis, jac = system(vm, va)
    # 1-norm: bounds the summed mismatch as well as every bus
    norm = np.abs(mis).sum()
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise PowerFlowDiverged(f"Newton power flow did not converge in {max_iter} iterations "
                                    f"(residual {norm:.3e})", norm, it)
        try:
            if dense:
                step = np.linalg.solve(jac, mis)
            else:
                step = spla.spsolve(jac, mis)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SingularJacobian(f"singular power-flow Jacobian: {exc}", norm, it) from None
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("singular power-flow Jacobian", norm, it)
        dx = np.zeros(2 * nb)
        dx[keep] = -step
        alpha = 1.0
        for _ in range(max_halvings + 1):
            vm_new = vm + alpha * dx[nb:]
            va_new = va + alpha * dx[:nb]
            mis_new, _ = system(vm_new, va_new, with_jac=False)
            norm_new = np.abs(mis_new).sum()
            if np.isfinite(norm_new) and norm_new < norm and np.all(vm_new > 0):
                break
            alpha *= 0.5
        else:
            raise PowerFlowDiverged(f"Newton power flow stalled (residual {norm:.3e})", norm, it)
        vm, va = vm_new, va_new
        it += 1
        mis, jac = system(vm, va)
        norm = np.abs(mis).sum()
    return vm, va, it


def solve_newton(case: NetworkCase, fixed: OperatingPoint | None = None, flex_bus=None, *,
                 start: OperatingPoint | None = None, tol=1e-8, max_iter=30) -> OperatingPoint:
    """Run a power flow with all injections fixed except the slack generator.

    ``fixed`` supplies generator outputs and the flex injection (default: case
    setpoints, no flex).  The first generator at the reference bus absorbs the
    imbalance; its returned ``gen_p``/``gen_q`` close the reference-bus balance.
    Raises :class:`PowerFlowDiverged` when Newton fails.
    """
    net = case.compiled
    fixed = OperatingPoint.flat(case) if fixed is None else fixed
    _check_point(case, fixed)
    slack = np.flatnonzero(net.gen_bus == net.ref)
    if len(slack) == 0:
        raise CaseError("reference bus has no generator to act as slack")
    slack = slack[0]
    p, q = bus_injections(case, fixed, flex_bus)
    s = start if start is not None else None
    vm, va, _ = newton_raphson(case, p, q, None if s is None else s.v_mag, None if s is None else s.v_ang,
                               tol=tol, max_iter=max_iter)
    gen_p = np.array(fixed.gen_p, dtype=float)
    gen_q = np.array(fixed.gen_q, dtype=float)
    dp, dq = _bus_mismatch(net, vm, va, p, q)
    gen_p[slack] -= dp[net.ref]
    gen_q[slack] -= dq[net.ref]
    return replace(fixed, v_mag=vm, v_ang=va, gen_p=gen_p, gen_q=gen_q)


def total_losses(case: NetworkCase, pt: OperatingPoint):
    """Sum over closed branches of ``p_from + p_to`` and ``q_from + q_to``."""
    arr = flow_array(case, pt.v_mag, pt.v_ang)
    return float(arr[:, 0].sum() + arr[:, 2].sum()), float(arr[:, 1].sum() + arr[:, 3].sum())
