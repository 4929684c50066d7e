"""Vectorised numpy kernels (reference implementation and fallback).

Per-branch local variable order is ``(V_from, V_to, theta_from, theta_to)``
and the per-branch flow order is ``(p_from, q_from, p_to, q_to)``.
"""
import numpy as np


def _end_terms(a, v, d, g, b, g1, b1):
    """Flow at one branch end with local magnitude ``a``, remote ``v`` and angle gap ``d``.

    Returns values and first/second partials w.r.t. (a, v, d).
    """
    c, s = np.cos(d), np.sin(d)
    u = g * c + b * s
    w = g * s - b * c
    p = a * a * g1 - a * v * u
    q = -a * a * b1 - a * v * w
    dp = (2 * a * g1 - v * u, -a * u, a * v * w)
    dq = (-2 * a * b1 - v * w, -a * w, -a * v * u)
    # second partials (aa, av, ad, vd, dd); vv is zero
    hp = (2 * g1 + 0 * a, -u, v * w, a * w, a * v * u)
    hq = (-2 * b1 + 0 * a, -w, -v * u, -a * u, a * v * w)
    return p, q, dp, dq, hp, hq


def branch_flows(vf, vt, thf, tht, g, b, gsh, bsh):
    g1, b1 = g + gsh, b + bsh
    pf, qf, *_ = _end_terms(vf, vt, thf - tht, g, b, g1, b1)
    pt, qt, *_ = _end_terms(vt, vf, tht - thf, g, b, g1, b1)
    return np.stack([pf, qf, pt, qt], axis=1)


def branch_jac(vf, vt, thf, tht, g, b, gsh, bsh):
    """Flows ``(m, 4)`` and gradients ``(m, 4, 4)`` w.r.t. the local variables."""
    g1, b1 = g + gsh, b + bsh
    m = len(vf)
    flows = np.empty((m, 4))
    grad = np.empty((m, 4, 4))
    pf, qf, dpf, dqf, _, _ = _end_terms(vf, vt, thf - tht, g, b, g1, b1)
    pt, qt, dpt, dqt, _, _ = _end_terms(vt, vf, tht - thf, g, b, g1, b1)
    flows[:, 0], flows[:, 1], flows[:, 2], flows[:, 3] = pf, qf, pt, qt
    for k, (da, dv, dd) in enumerate((dpf, dqf)):
        grad[:, k] = np.stack([da, dv, dd, -dd], axis=1)
    # to-end: local magnitude is V_to, angle gap is theta_to - theta_from
    for k, (da, dv, dd) in enumerate((dpt, dqt), start=2):
        grad[:, k] = np.stack([dv, da, -dd, dd], axis=1)
    return flows, grad


def _local_hess(h, swap):
    aa, av, ad, vd, dd = h
    m = len(np.atleast_1d(aa))
    out = np.zeros((m, 4, 4))
    # local order for the from end: (a, v, +d, -d)
    ia, iv = (1, 0) if swap else (0, 1)
    sd = -1.0 if swap else 1.0  # d = sd * (theta_f - theta_t)
    out[:, ia, ia] = aa
    out[:, ia, iv] = out[:, iv, ia] = av
    out[:, ia, 2] = out[:, 2, ia] = sd * ad
    out[:, ia, 3] = out[:, 3, ia] = -sd * ad
    out[:, iv, 2] = out[:, 2, iv] = sd * vd
    out[:, iv, 3] = out[:, 3, iv] = -sd * vd
    out[:, 2, 2] = out[:, 3, 3] = dd
    out[:, 2, 3] = out[:, 3, 2] = -dd
    return out


def branch_hess(vf, vt, thf, tht, g, b, gsh, bsh, lam):
    """Weighted Hessian ``sum_k lam[:, k] * d2 flow_k`` per branch, shape ``(m, 4, 4)``."""
    g1, b1 = g + gsh, b + bsh
    _, _, _, _, hpf, hqf = _end_terms(vf, vt, thf - tht, g, b, g1, b1)
    _, _, _, _, hpt, hqt = _end_terms(vt, vf, tht - thf, g, b, g1, b1)
    out = lam[:, 0, None, None] * _local_hess(hpf, False)
    out += lam[:, 1, None, None] * _local_hess(hqf, False)
    out += lam[:, 2, None, None] * _local_hess(hpt, True)
    out += lam[:, 3, None, None] * _local_hess(hqt, True)
    return out


def dense_pf(f, t, g, b, gsh, bsh, vm, va, p_inj, q_inj, gs, bs):
    """Bus mismatch ``(dP, dQ)`` and dense Jacobian w.r.t. ``(va, vm)``.

    dP = p_inj - sum of outgoing flows - gs V^2, dQ = q_inj - sum of flows + bs V^2.
    """
    nb = len(vm)
    flows, grad = branch_jac(vm[f], vm[t], va[f], va[t], g, b, gsh, bsh)
    mis = np.concatenate([p_inj - gs * vm**2, q_inj + bs * vm**2])
    np.subtract.at(mis, f, flows[:, 0])
    np.subtract.at(mis, nb + f, flows[:, 1])
    np.subtract.at(mis, t, flows[:, 2])
    np.subtract.at(mis, nb + t, flows[:, 3])
    jac = np.zeros((2 * nb, 2 * nb))
    rows = np.stack([f, nb + f, t, nb + t], axis=1)  # (m, 4)
    cols = np.stack([nb + f, nb + t, f, t], axis=1)  # local var -> column
    r = np.repeat(rows[:, :, None], 4, axis=2)
    c = np.repeat(cols[:, None, :], 4, axis=1)
    np.subtract.at(jac, (r.ravel(), c.ravel()), grad.ravel())
    idx = np.arange(nb)
    jac[idx, nb + idx] -= 2 * gs * vm
    jac[nb + idx, nb + idx] += 2 * bs * vm
    return mis, jac
