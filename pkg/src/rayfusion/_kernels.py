"""Compiled primal-dual sweeps.

Same arithmetic as the array code in :class:`rayfusion.solver.PrimalDual`
(which the tests use as the reference), fused into single passes over rays
and voxels.  Loops are sequential, so results are deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always", error_model="numpy")
def _project_simplex_row(v, buf):
    n = v.shape[0]
    for i in range(n):
        buf[i] = v[i]
    # insertion sort, decreasing
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += buf[i]
        t = (css - 1.0) / (i + 1)
        if buf[i] - t > 0:
            theta = t
    for i in range(n):
        v[i] = max(v[i] - theta, 0.0)


@njit(cache=True, inline="always", error_model="numpy")
def _y_step(p, y, yb, costs, gy, tau, anchor, y0):
    for l in range(y.shape[1]):
        old = y[p, l]
        w = old - tau[l] * (costs[p, l] + gy[l])
        if anchor > 0:
            w = (w + anchor * tau[l] * y0[p, l]) / (1.0 + anchor * tau[l])
        w = min(1.0, max(0.0, w))
        y[p, l] = w
        yb[p, l] = 2.0 * w - old


@njit(cache=True, error_model="numpy")
def iterate(n, x, y, z, xb, yb, zb, a, b, g, mu, nu, q,
            costs, vox, first, has_next, lin, vis, nbr, A, pl, pm, reg_on, box,
            tau_x, tau_z, sig_g, sig_m, sig_q, gamma, anchor, x0, y0, z0):
    P, L1 = y.shape
    V = x.shape[0]
    npair = pl.shape[0]
    gx = np.zeros((V, L1))
    gcur = np.zeros(L1)
    tau = np.empty(L1)
    v = np.empty(L1)
    buf = np.empty(L1)
    qq = np.empty(3)
    d = np.empty(3)
    atq = np.empty((npair, 3))
    visf = 1.0 if vis else 0.0
    ty_occ = gamma / (2.0 + visf)
    sa_first = 1.0 / gamma
    sa_rest = 0.5 / gamma
    sb = 0.5 / gamma

    for _ in range(n):
        gx[:, :] = 0.0
        # -- rays: dual ascent at p, then the primal step at p - 1 whose
        # gradient is complete once the duals at p are known
        yprev_b = 1.0
        for p in range(P):
            if first[p]:
                yprev_b = 1.0
            s = vox[p]
            occ = 0.0
            for l in range(L1):
                a[p, l] = max(0.0, a[p, l] + (sa_first if first[p] else sa_rest) * (yb[p, l] - yprev_b))
                b[p, l] = max(0.0, b[p, l] + sb * (yb[p, l] - xb[s, l]))
                if l > 0:
                    occ += yb[p, l]
            gl = 0.0
            if vis:
                rhs = yprev_b - xb[s, 0] if lin[p] else 0.0
                g[p] = max(0.0, g[p] + sig_g[p] * (occ - rhs))
                if lin[p]:
                    gl = g[p]
            yprev_b = yb[p, 0]
            # finish p - 1 (same ray): it feeds the rows of position p
            if not first[p]:
                acc = gl
                for l in range(L1):
                    acc += a[p, l]
                gcur[0] -= acc
                tau[0] = gamma / (2.0 + L1 + visf * (1.0 if lin[p] else 0.0))
                _y_step(p - 1, y, yb, costs, gcur, tau, anchor, y0)
            # own rows of p
            for l in range(L1):
                gcur[l] = a[p, l] + b[p, l]
                gx[s, l] -= b[p, l]
            if vis:
                for l in range(1, L1):
                    gcur[l] += g[p]
                gx[s, 0] += gl
            if not has_next[p]:
                tau[0] = 0.5 * gamma
                for l in range(1, L1):
                    tau[l] = ty_occ
                _y_step(p, y, yb, costs, gcur, tau, anchor, y0)
            else:
                for l in range(1, L1):
                    tau[l] = ty_occ

        # -- voxels: dual ascent on marginals and regularizer, then the
        # primal step on z, which only needs the duals of the same voxel
        for s in range(V):
            for pi in range(npair):
                if not reg_on[pi]:
                    continue
                l = pl[pi]
                m = pm[pi]
                for k in range(3):
                    d[k] = zb[s, k, l, m] - zb[s, k, m, l]
                nrm2 = 0.0
                for j in range(3):
                    w = q[s, pi, j] + sig_q[pi] * (A[pi, j, 0] * d[0] + A[pi, j, 1] * d[1]
                                                   + A[pi, j, 2] * d[2])
                    qq[j] = w
                    nrm2 += w * w
                if box[pi]:
                    for j in range(3):
                        q[s, pi, j] = min(1.0, max(-1.0, qq[j]))
                else:
                    scale = 1.0 / max(1.0, np.sqrt(nrm2))
                    for j in range(3):
                        q[s, pi, j] = qq[j] * scale
                for k in range(3):
                    atq[pi, k] = (A[pi, 0, k] * q[s, pi, 0] + A[pi, 1, k] * q[s, pi, 1]
                                  + A[pi, 2, k] * q[s, pi, 2])
            for k in range(3):
                t = nbr[s, k]
                for l in range(L1):
                    rs = 0.0
                    cs = 0.0
                    for m in range(L1):
                        rs += zb[s, k, l, m]
                        cs += zb[s, k, m, l]
                    mu[s, k, l] += sig_m * (rs - xb[s, l])
                    nu[s, k, l] += sig_m * (cs - xb[t, l])
                for l in range(L1):
                    gx[s, l] -= mu[s, k, l]
                    gx[t, l] -= nu[s, k, l]
                pi = 0
                for l in range(L1):
                    for m in range(l + 1, L1):
                        if reg_on[pi]:
                            zb[s, k, l, m] = atq[pi, k]
                            zb[s, k, m, l] = -atq[pi, k]
                        else:
                            zb[s, k, l, m] = 0.0
                            zb[s, k, m, l] = 0.0
                        pi += 1
                for l in range(L1):
                    for m in range(L1):
                        # zb holds the regularizer part of the gradient here
                        gz = mu[s, k, l] + nu[s, k, m] + (zb[s, k, l, m] if l != m else 0.0)
                        old = z[s, k, l, m]
                        tz = tau_z[k, l, m]
                        w = old - tz * gz
                        if anchor > 0:
                            w = (w + anchor * tz * z0[s, k, l, m]) / (1.0 + anchor * tz)
                        w = min(1.0, max(0.0, w))
                        z[s, k, l, m] = w
                        zb[s, k, l, m] = 2.0 * w - old

        # -- primal step on x
        for s in range(V):
            ts = tau_x[s]
            for l in range(L1):
                w = x[s, l] - ts * gx[s, l]
                if anchor > 0:
                    w = (w + anchor * ts * x0[s, l]) / (1.0 + anchor * ts)
                v[l] = w
            _project_simplex_row(v, buf)
            for l in range(L1):
                xb[s, l] = 2.0 * v[l] - x[s, l]
                x[s, l] = v[l]


@njit(cache=True, error_model="numpy")
def build_visibility(x, vox, first, order, y):
    """Running-minimum free space plus greedy occupied fill, one ray at a time."""
    P, L1 = y.shape
    prev = 1.0
    for p in range(P):
        if first[p]:
            prev = 1.0
        s = vox[p]
        xf = x[s, 0]
        y[p, 0] = min(prev, xf)
        budget = max(0.0, prev - xf)
        for r in range(L1 - 1):
            lab = order[p, r]
            amount = min(x[s, lab], budget)
            y[p, lab] = amount
            budget -= amount
        prev = y[p, 0]


@njit(cache=True, error_model="numpy")
def project_simplex_rows(v):
    """In-place simplex projection of every row."""
    buf = np.empty(v.shape[1])
    for i in range(v.shape[0]):
        _project_simplex_row(v[i], buf)


@njit(cache=True, error_model="numpy")
def smoothness(z, pl, pm, A, box):
    """Sum over voxels and pairs of ``||A d||`` (l1 where ``box``, else l2)."""
    total = 0.0
    d = np.empty(3)
    for s in range(z.shape[0]):
        for pi in range(pl.shape[0]):
            l = pl[pi]
            m = pm[pi]
            for k in range(3):
                d[k] = z[s, k, l, m] - z[s, k, m, l]
            acc = 0.0
            for j in range(3):
                w = A[pi, j, 0] * d[0] + A[pi, j, 1] * d[1] + A[pi, j, 2] * d[2]
                acc += abs(w) if box[pi] else w * w
            total += acc if box[pi] else np.sqrt(acc)
    return total


FEASIBLE_OK = 0
FEASIBLE_TOTALS = 1
FEASIBLE_STUCK = 2


@njit(cache=True, error_model="numpy")
def feasible_z(x, nbr, z0, z, counts, max_rounds):
    """Affine projection of every slice followed by the rectangle repair.

    Returns ``FEASIBLE_TOTALS`` when ``x`` sums differ between neighbors
    (no feasible slice exists) and ``FEASIBLE_STUCK`` when the repair
    exceeds ``max_rounds`` substitutions in a slice.
    """
    V, L1 = x.shape
    n = L1
    r = np.empty(n)
    c = np.empty(n)
    for s in range(V):
        ts = 0.0
        for l in range(n):
            ts += x[s, l]
        for k in range(3):
            tt = 0.0
            for l in range(n):
                tt += x[nbr[s, k], l]
            if abs(ts - tt) > 1e-9:
                return FEASIBLE_TOTALS
    for s in range(V):
        for k in range(3):
            t = nbr[s, k]
            rsum = 0.0
            for l in range(n):
                acc = 0.0
                for m in range(n):
                    acc += z0[s, k, l, m]
                r[l] = acc - x[s, l]
                rsum += r[l]
            for m in range(n):
                acc = 0.0
                for l in range(n):
                    acc += z0[s, k, l, m]
                c[m] = acc - x[t, m]
            for l in range(n):
                for m in range(n):
                    z[s, k, l, m] = z0[s, k, l, m] - r[l] / n - c[m] / n + rsum / (n * n)
            # repair negatives, most negative first
            rounds = 0
            while True:
                l1 = 0
                m1 = 0
                worst = z[s, k, 0, 0]
                for l in range(n):
                    for m in range(n):
                        if z[s, k, l, m] < worst:
                            worst = z[s, k, l, m]
                            l1 = l
                            m1 = m
                if worst >= 0:
                    break
                m2 = 0
                for m in range(n):
                    if z[s, k, l1, m] > z[s, k, l1, m2]:
                        m2 = m
                l2 = 0
                for l in range(n):
                    if z[s, k, l, m1] > z[s, k, l2, m1]:
                        l2 = l
                neg = -worst
                eps = min(neg, min(z[s, k, l1, m2], z[s, k, l2, m1]))
                if eps <= 0:
                    # no positive partner: the entry is rounding noise
                    z[s, k, l1, m1] = 0.0
                    continue
                z[s, k, l1, m1] = 0.0 if eps == neg else z[s, k, l1, m1] + eps
                z[s, k, l2, m2] += eps
                z[s, k, l1, m2] -= eps
                z[s, k, l2, m1] -= eps
                counts[s, k] += 1
                rounds += 1
                if rounds > max_rounds:
                    return FEASIBLE_STUCK
    return FEASIBLE_OK
