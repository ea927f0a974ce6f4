"""Compiled inner loops for the inertial shallow-water step and its adjoint.

Traversal is row-major with x-interfaces before y-interfaces; nothing is
reduced in parallel, so results are bit-reproducible.

Interface depth ties (equal free surface or equal bed) resolve to the
first/upstream-index cell, and the same convention drives the reverse pass.
"""
import numpy as np
from numba import njit

SEVEN_THIRDS = 7.0 / 3.0
FIVE_THIRDS = 5.0 / 3.0


@njit(cache=True)
def interface_depth(za, zb, ha, hb):
    ea = ha + za
    eb = hb + zb
    hf = (ea if ea >= eb else eb) - (za if za >= zb else zb)
    return hf if hf > 0.0 else 0.0


@njit(cache=True)
def _interface_depths(h, z, thr):
    rows, cols = h.shape
    hfx = np.empty((rows, cols - 1))
    hfy = np.empty((rows - 1, cols))
    for i in range(rows):
        for j in range(cols - 1):
            hfx[i, j] = interface_depth(z[i, j], z[i, j + 1], h[i, j], h[i, j + 1])
    for i in range(rows - 1):
        for j in range(cols):
            hfy[i, j] = interface_depth(z[i, j], z[i + 1, j], h[i, j], h[i + 1, j])
    return hfx, hfy


@njit(cache=True)
def momentum(h, z, qx, qy, dt, dx, theta, g, n, thr):
    """Return (qx_new, qy_new, bad) where bad is the first non-finite flat index or -1."""
    rows, cols = h.shape
    hfx, hfy = _interface_depths(h, z, thr)
    c1 = 0.5 * (1.0 - theta)
    fric = g * dt * n * n
    qx_new = np.zeros_like(qx)
    qy_new = np.zeros_like(qy)
    bad = -1
    for i in range(rows):
        for j in range(cols - 1):
            hf = hfx[i, j]
            if hf <= thr:
                continue
            nb = 0.0
            if j > 0 and hfx[i, j - 1] > thr:
                nb += qx[i, j - 1]
            if j < cols - 2 and hfx[i, j + 1] > thr:
                nb += qx[i, j + 1]
            q = qx[i, j]
            slope = ((h[i, j + 1] + z[i, j + 1]) - (h[i, j] + z[i, j])) / dx
            num = theta * q + c1 * nb - g * hf * dt * slope
            den = 1.0 + fric * abs(q) / hf ** SEVEN_THIRDS
            qn = num / den
            qx_new[i, j] = qn
            if bad < 0 and not np.isfinite(qn):
                bad = i * cols + j
    for i in range(rows - 1):
        for j in range(cols):
            hf = hfy[i, j]
            if hf <= thr:
                continue
            nb = 0.0
            if i > 0 and hfy[i - 1, j] > thr:
                nb += qy[i - 1, j]
            if i < rows - 2 and hfy[i + 1, j] > thr:
                nb += qy[i + 1, j]
            q = qy[i, j]
            slope = ((h[i + 1, j] + z[i + 1, j]) - (h[i, j] + z[i, j])) / dx
            num = theta * q + c1 * nb - g * hf * dt * slope
            den = 1.0 + fric * abs(q) / hf ** SEVEN_THIRDS
            qn = num / den
            qy_new[i, j] = qn
            if bad < 0 and not np.isfinite(qn):
                bad = i * cols + j
    return qx_new, qy_new, bad


@njit(cache=True)
def continuity(h, qx, qy, dt, dx):
    """Unclamped depth update from already-updated fluxes."""
    rows, cols = h.shape
    c = dt / dx
    h1 = h.copy()
    for i in range(rows):
        for j in range(cols - 1):
            f = c * qx[i, j]
            h1[i, j] -= f
            h1[i, j + 1] += f
    for i in range(rows - 1):
        for j in range(cols):
            f = c * qy[i, j]
            h1[i, j] -= f
            h1[i + 1, j] += f
    return h1


@njit(cache=True)
def _outflow_scale(h, qx, qy, dt, dx):
    """Per-cell factor s <= 1 so that outgoing fluxes cannot take more than h."""
    rows, cols = h.shape
    c = dt / dx
    out = np.zeros_like(h)
    for i in range(rows):
        for j in range(cols - 1):
            q = qx[i, j]
            if q > 0.0:
                out[i, j] += c * q
            elif q < 0.0:
                out[i, j + 1] -= c * q
    for i in range(rows - 1):
        for j in range(cols):
            q = qy[i, j]
            if q > 0.0:
                out[i, j] += c * q
            elif q < 0.0:
                out[i + 1, j] -= c * q
    s = np.ones_like(h)
    for i in range(rows):
        for j in range(cols):
            if out[i, j] > h[i, j]:
                s[i, j] = h[i, j] / out[i, j]
    return s, out


@njit(cache=True)
def limit_outflow(h, qx, qy, dt, dx):
    """Scale each cell's outgoing fluxes so the cell cannot be overdrawn in one step."""
    rows, cols = h.shape
    s, _ = _outflow_scale(h, qx, qy, dt, dx)
    qx_l = qx.copy()
    qy_l = qy.copy()
    for i in range(rows):
        for j in range(cols - 1):
            q = qx[i, j]
            if q > 0.0:
                qx_l[i, j] = q * s[i, j]
            elif q < 0.0:
                qx_l[i, j] = q * s[i, j + 1]
    for i in range(rows - 1):
        for j in range(cols):
            q = qy[i, j]
            if q > 0.0:
                qy_l[i, j] = q * s[i, j]
            elif q < 0.0:
                qy_l[i, j] = q * s[i + 1, j]
    return qx_l, qy_l


@njit(cache=True)
def clamp(h1):
    """Clip negative depths in place; return the (non-positive) clipped depth sum."""
    rows, cols = h1.shape
    neg = 0.0
    for i in range(rows):
        for j in range(cols):
            if h1[i, j] < 0.0:
                neg += h1[i, j]
                h1[i, j] = 0.0
    return neg


@njit(cache=True)
def boundary(h, in_r, in_c, in_dh, out_r, out_c, out_coef):
    """Add influx depth, then drain outflux cells by Manning normal flow.

    ``out_coef`` is dt/dx * sqrt(S)/n so the drained depth is out_coef * h^(5/3),
    never more than the cell holds. Returns (added depth sum, drained depth sum).
    """
    added = 0.0
    for m in range(in_r.size):
        h[in_r[m], in_c[m]] += in_dh
        added += in_dh
    drained = 0.0
    for m in range(out_r.size):
        i, j = out_r[m], out_c[m]
        hc = h[i, j]
        if hc <= 0.0:
            continue
        r = out_coef * hc ** FIVE_THIRDS
        if r > hc:
            r = hc
        h[i, j] = hc - r
        drained += r
    return added, drained


@njit(cache=True)
def step(z, h, qx, qy, dt, dx, theta, g, n, thr, in_r, in_c, in_dh, out_r, out_c, out_coef):
    """One full step. Returns (h, qx, qy, clipped, added, drained, bad)."""
    qx_raw, qy_raw, bad = momentum(h, z, qx, qy, dt, dx, theta, g, n, thr)
    qx_new, qy_new = limit_outflow(h, qx_raw, qy_raw, dt, dx)
    h1 = continuity(h, qx_new, qy_new, dt, dx)
    clipped = clamp(h1)
    added, drained = boundary(h1, in_r, in_c, in_dh, out_r, out_c, out_coef)
    if bad < 0:
        rows, cols = h1.shape
        for i in range(rows):
            for j in range(cols):
                if not np.isfinite(h1[i, j]):
                    bad = i * cols + j
                    break
            if bad >= 0:
                break
    return h1, qx_new, qy_new, clipped, added, drained, bad


@njit(cache=True)
def step_backward(z, h, qx, qy, dt, dx, theta, g, n, thr,
                  in_r, in_c, in_dh, out_r, out_c, out_coef,
                  lam_h, lam_qx, lam_qy, grad_z):
    """Reverse one step.

    (h, qx, qy) is the state entering the step; lam_* are adjoints of the
    state leaving it. Returns adjoints of the entering state and accumulates
    d/dz into ``grad_z``. dt is a constant here.
    """
    rows, cols = h.shape
    # recompute the forward intermediates
    hfx, hfy = _interface_depths(h, z, thr)
    qx_new, qy_new, _ = momentum(h, z, qx, qy, dt, dx, theta, g, n, thr)
    sc, out = _outflow_scale(h, qx_new, qy_new, dt, dx)
    qx_l, qy_l = limit_outflow(h, qx_new, qy_new, dt, dx)
    h1 = continuity(h, qx_l, qy_l, dt, dx)

    # clamp then boundary: h2 = max(h1, 0); h3 = h2 + influx; h4 = outflux drain
    lam1 = lam_h.copy()
    h3 = h1.copy()
    for i in range(rows):
        for j in range(cols):
            if h3[i, j] < 0.0:
                h3[i, j] = 0.0
    for m in range(in_r.size):
        h3[in_r[m], in_c[m]] += in_dh
    for m in range(out_r.size):
        i, j = out_r[m], out_c[m]
        hc = h3[i, j]
        if hc <= 0.0:
            continue
        r = out_coef * hc ** FIVE_THIRDS
        if r > hc:
            lam1[i, j] = 0.0
        else:
            lam1[i, j] *= 1.0 - FIVE_THIRDS * out_coef * hc ** (2.0 / 3.0)
    for i in range(rows):
        for j in range(cols):
            if h1[i, j] < 0.0:
                lam1[i, j] = 0.0

    # continuity
    c = dt / dx
    lh = lam1.copy()
    lqx_new = lam_qx.copy()
    lqy_new = lam_qy.copy()
    for i in range(rows):
        for j in range(cols - 1):
            lqx_new[i, j] += c * (lam1[i, j + 1] - lam1[i, j])
    for i in range(rows - 1):
        for j in range(cols):
            lqy_new[i, j] += c * (lam1[i + 1, j] - lam1[i, j])

    # outflow limiter: q_l = q * s[src], s = h / out where the cell is overdrawn
    lh, lqx_new, lqy_new = _limiter_backward(h, qx_new, qy_new, sc, out, c, lh, lqx_new, lqy_new)

    # momentum
    c1 = 0.5 * (1.0 - theta)
    fric = g * dt * n * n
    lqx = np.zeros_like(qx)
    lqy = np.zeros_like(qy)
    for i in range(rows):
        for j in range(cols - 1):
            hf = hfx[i, j]
            if hf <= thr:
                continue
            lam = lqx_new[i, j]
            if lam == 0.0:
                continue
            q = qx[i, j]
            za, zb = z[i, j], z[i, j + 1]
            ea, eb = h[i, j] + za, h[i, j + 1] + zb
            slope = (eb - ea) / dx
            hf73 = hf ** SEVEN_THIRDS
            den = 1.0 + fric * abs(q) / hf73
            lnum = lam / den
            lden = -lam * qx_new[i, j] / den
            sq = 1.0 if q > 0.0 else (-1.0 if q < 0.0 else 0.0)
            lqx[i, j] += theta * lnum + lden * fric * sq / hf73
            if j > 0 and hfx[i, j - 1] > thr:
                lqx[i, j - 1] += c1 * lnum
            if j < cols - 2 and hfx[i, j + 1] > thr:
                lqx[i, j + 1] += c1 * lnum
            lhf = -lnum * g * dt * slope - lden * fric * abs(q) * SEVEN_THIRDS / (hf73 * hf)
            le = lnum * g * hf * dt / dx
            lea = le
            leb = -le
            if ea >= eb:
                lea += lhf
            else:
                leb += lhf
            lh[i, j] += lea
            lh[i, j + 1] += leb
            grad_z[i, j] += lea
            grad_z[i, j + 1] += leb
            if za >= zb:
                grad_z[i, j] -= lhf
            else:
                grad_z[i, j + 1] -= lhf
    for i in range(rows - 1):
        for j in range(cols):
            hf = hfy[i, j]
            if hf <= thr:
                continue
            lam = lqy_new[i, j]
            if lam == 0.0:
                continue
            q = qy[i, j]
            za, zb = z[i, j], z[i + 1, j]
            ea, eb = h[i, j] + za, h[i + 1, j] + zb
            slope = (eb - ea) / dx
            hf73 = hf ** SEVEN_THIRDS
            den = 1.0 + fric * abs(q) / hf73
            lnum = lam / den
            lden = -lam * qy_new[i, j] / den
            sq = 1.0 if q > 0.0 else (-1.0 if q < 0.0 else 0.0)
            lqy[i, j] += theta * lnum + lden * fric * sq / hf73
            if i > 0 and hfy[i - 1, j] > thr:
                lqy[i - 1, j] += c1 * lnum
            if i < rows - 2 and hfy[i + 1, j] > thr:
                lqy[i + 1, j] += c1 * lnum
            lhf = -lnum * g * dt * slope - lden * fric * abs(q) * SEVEN_THIRDS / (hf73 * hf)
            le = lnum * g * hf * dt / dx
            lea = le
            leb = -le
            if ea >= eb:
                lea += lhf
            else:
                leb += lhf
            lh[i, j] += lea
            lh[i + 1, j] += leb
            grad_z[i, j] += lea
            grad_z[i + 1, j] += leb
            if za >= zb:
                grad_z[i, j] -= lhf
            else:
                grad_z[i + 1, j] -= lhf
    return lh, lqx, lqy


@njit(cache=True)
def _limiter_backward(h, qx, qy, s, out, c, lh, lqx_l, lqy_l):
    rows, cols = h.shape
    ls = np.zeros_like(h)
    lqx = np.empty_like(qx)
    lqy = np.empty_like(qy)
    for i in range(rows):
        for j in range(cols - 1):
            q = qx[i, j]
            if q > 0.0:
                lqx[i, j] = lqx_l[i, j] * s[i, j]
                ls[i, j] += lqx_l[i, j] * q
            elif q < 0.0:
                lqx[i, j] = lqx_l[i, j] * s[i, j + 1]
                ls[i, j + 1] += lqx_l[i, j] * q
            else:
                lqx[i, j] = 0.0
    for i in range(rows - 1):
        for j in range(cols):
            q = qy[i, j]
            if q > 0.0:
                lqy[i, j] = lqy_l[i, j] * s[i, j]
                ls[i, j] += lqy_l[i, j] * q
            elif q < 0.0:
                lqy[i, j] = lqy_l[i, j] * s[i + 1, j]
                ls[i + 1, j] += lqy_l[i, j] * q
            else:
                lqy[i, j] = 0.0
    lout = np.zeros_like(h)
    for i in range(rows):
        for j in range(cols):
            if out[i, j] > h[i, j]:
                lh[i, j] += ls[i, j] / out[i, j]
                lout[i, j] = -ls[i, j] * h[i, j] / (out[i, j] * out[i, j])
    for i in range(rows):
        for j in range(cols - 1):
            q = qx[i, j]
            if q > 0.0:
                lqx[i, j] += c * lout[i, j]
            elif q < 0.0:
                lqx[i, j] -= c * lout[i, j + 1]
    for i in range(rows - 1):
        for j in range(cols):
            q = qy[i, j]
            if q > 0.0:
                lqy[i, j] += c * lout[i, j]
            elif q < 0.0:
                lqy[i, j] -= c * lout[i + 1, j]
    return lh, lqx, lqy
