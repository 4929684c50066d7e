"""numba-compiled kernels; same signatures and results as ``_numpy``."""
import math

import numpy as np
from numba import njit

_OPTS = dict(cache=True, nogil=True, fastmath=False, error_model="numpy")


@njit(**_OPTS)
def _end(a, v, d, g, b, g1, b1, out_val, out_grad, out_hess, k_p, swap):
    c = math.cos(d)
    s = math.sin(d)
    u = g * c + b * s
    w = g * s - b * c
    out_val[k_p] = a * a * g1 - a * v * u
    out_val[k_p + 1] = -a * a * b1 - a * v * w
    ia = 1 if swap else 0
    iv = 0 if swap else 1
    sd = -1.0 if swap else 1.0
    # gradient rows: p then q
    dps = (2 * a * g1 - v * u, -a * u, a * v * w)
    dqs = (-2 * a * b1 - v * w, -a * w, -a * v * u)
    hps = (2 * g1, -u, v * w, a * w, a * v * u)
    hqs = (-2 * b1, -w, -v * u, -a * u, a * v * w)
    for r in range(2):
        dd = dps if r == 0 else dqs
        out_grad[k_p + r, ia] = dd[0]
        out_grad[k_p + r, iv] = dd[1]
        out_grad[k_p + r, 2] = sd * dd[2]
        out_grad[k_p + r, 3] = -sd * dd[2]
        h = hps if r == 0 else hqs
        hh = out_hess[k_p + r]
        hh[ia, ia] = h[0]
        hh[iv, iv] = 0.0
        hh[ia, iv] = h[1]
        hh[iv, ia] = h[1]
        hh[ia, 2] = sd * h[2]
        hh[2, ia] = sd * h[2]
        hh[ia, 3] = -sd * h[2]
        hh[3, ia] = -sd * h[2]
        hh[iv, 2] = sd * h[3]
        hh[2, iv] = sd * h[3]
        hh[iv, 3] = -sd * h[3]
        hh[3, iv] = -sd * h[3]
        hh[2, 2] = h[4]
        hh[3, 3] = h[4]
        hh[2, 3] = -h[4]
        hh[3, 2] = -h[4]


@njit(**_OPTS)
def _branch(vf, vt, thf, tht, g, b, gsh, bsh, val, grad, hess):
    g1 = g + gsh
    b1 = b + bsh
    _end(vf, vt, thf - tht, g, b, g1, b1, val, grad, hess, 0, False)
    _end(vt, vf, tht - thf, g, b, g1, b1, val, grad, hess, 2, True)


@njit(**_OPTS)
def branch_flows(vf, vt, thf, tht, g, b, gsh, bsh):
    m = vf.shape[0]
    out = np.empty((m, 4))
    for e in range(m):
        g1 = g[e] + gsh[e]
        b1 = b[e] + bsh[e]
        for end in range(2):
            if end == 0:
                a, v, d = vf[e], vt[e], thf[e] - tht[e]
            else:
                a, v, d = vt[e], vf[e], tht[e] - thf[e]
            c = math.cos(d)
            s = math.sin(d)
            out[e, 2 * end] = a * a * g1 - a * v * (g[e] * c + b[e] * s)
            out[e, 2 * end + 1] = -a * a * b1 - a * v * (g[e] * s - b[e] * c)
    return out


@njit(**_OPTS)
def branch_jac(vf, vt, thf, tht, g, b, gsh, bsh):
    m = vf.shape[0]
    flows = np.empty((m, 4))
    grad = np.empty((m, 4, 4))
    hess = np.empty((4, 4, 4))
    for e in range(m):
        _branch(vf[e], vt[e], thf[e], tht[e], g[e], b[e], gsh[e], bsh[e], flows[e], grad[e], hess)
    return flows, grad


@njit(**_OPTS)
def branch_hess(vf, vt, thf, tht, g, b, gsh, bsh, lam):
    m = vf.shape[0]
    out = np.zeros((m, 4, 4))
    val = np.empty(4)
    grad = np.empty((4, 4))
    hess = np.empty((4, 4, 4))
    for e in range(m):
        _branch(vf[e], vt[e], thf[e], tht[e], g[e], b[e], gsh[e], bsh[e], val, grad, hess)
        for k in range(4):
            lk = lam[e, k]
            if lk != 0.0:
                for i in range(4):
                    for j in range(4):
                        out[e, i, j] += lk * hess[k, i, j]
    return out


@njit(**_OPTS)
def dense_pf(f, t, g, b, gsh, bsh, vm, va, p_inj, q_inj, gs, bs):
    nb = vm.shape[0]
    m = f.shape[0]
    mis = np.empty(2 * nb)
    jac = np.zeros((2 * nb, 2 * nb))
    for i in range(nb):
        mis[i] = p_inj[i] - gs[i] * vm[i] ** 2
        mis[nb + i] = q_inj[i] + bs[i] * vm[i] ** 2
        jac[i, nb + i] = -2 * gs[i] * vm[i]
        jac[nb + i, nb + i] = 2 * bs[i] * vm[i]
    val = np.empty(4)
    grad = np.empty((4, 4))
    hess = np.empty((4, 4, 4))
    rows = np.empty(4, dtype=np.int64)
    cols = np.empty(4, dtype=np.int64)
    for e in range(m):
        i, j = f[e], t[e]
        _branch(vm[i], vm[j], va[i], va[j], g[e], b[e], gsh[e], bsh[e], val, grad, hess)
        rows[0], rows[1], rows[2], rows[3] = i, nb + i, j, nb + j
        cols[0], cols[1], cols[2], cols[3] = nb + i, nb + j, i, j
        for k in range(4):
            mis[rows[k]] -= val[k]
            for l in range(4):
                jac[rows[k], cols[l]] -= grad[k, l]
    return mis, jac
