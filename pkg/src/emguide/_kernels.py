"""Numba kernels: spline geometry, horizon cost/derivatives, and the QP solver.

Everything here operates on plain float64 arrays so the closed-loop solve
stays in compiled code. Python-facing modules wrap these with dataclasses.

State layout x = [px, py, vx, vy, alpha, theta] (6,)
Input layout u = [ax, ay, alpha_rate, theta_rate] (4,)
"""

from __future__ import annotations

import numpy as np
from numba import njit

NX = 6
NU = 4

# 8-point Gauss-Legendre nodes/weights on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
GL_NODES = ((_GL_X + 1.0) / 2.0).copy()
GL_WEIGHTS = (_GL_W / 2.0).copy()


# --- cubic segment geometry --------------------------------------------------
#
# A path is (seg_coef, seg_cum, seg_quad):
#   seg_coef[i, axis, j]: C_i(tau) = sum_j coef[j] * tau^j on tau in [0, 1]
#   seg_cum[i]: arc length accumulated before segment i (seg_cum[-1] = L)
#   seg_quad[i]: number of quadrature subintervals used for this segment;
#                fixed at build time so arc(tau) is one consistent function.


@njit(cache=True)
def seg_point(coef, tau):
    out = np.empty(2)
    for a in range(2):
        out[a] = coef[a, 0] + tau * (coef[a, 1] + tau * (coef[a, 2] + tau * coef[a, 3]))
    return out


@njit(cache=True)
def seg_d1(coef, tau):
    out = np.empty(2)
    for a in range(2):
        out[a] = coef[a, 1] + tau * (2.0 * coef[a, 2] + 3.0 * coef[a, 3] * tau)
    return out


@njit(cache=True)
def seg_d2(coef, tau):
    out = np.empty(2)
    for a in range(2):
        out[a] = 2.0 * coef[a, 2] + 6.0 * coef[a, 3] * tau
    return out


@njit(cache=True)
def seg_speed(coef, tau):
    d = seg_d1(coef, tau)
    return np.sqrt(d[0] * d[0] + d[1] * d[1])


@njit(cache=True)
def seg_arc(coef, nquad, tau):
    """Arc length of one segment from 0 to tau (composite Gauss-Legendre)."""
    if tau <= 0.0:
        return 0.0
    total = 0.0
    step = tau / nquad
    for i in range(nquad):
        lo = i * step
        for q in range(GL_NODES.shape[0]):
            total += GL_WEIGHTS[q] * seg_speed(coef, lo + GL_NODES[q] * step) * step
    return total


@njit(cache=True)
def theta_to_seg_tau(seg_coef, seg_cum, seg_quad, theta):
    """Invert the arc-length map: theta in [0, L] -> (segment index, tau)."""
    nseg = seg_coef.shape[0]
    L = seg_cum[nseg]
    if theta <= 0.0:
        return 0, 0.0
    if theta >= L:
        return nseg - 1, 1.0
    lo, hi = 0, nseg
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if seg_cum[mid] <= theta:
            lo = mid
        else:
            hi = mid
    i = lo
    coef = seg_coef[i]
    target = theta - seg_cum[i]
    seg_len = seg_cum[i + 1] - seg_cum[i]
    tau = target / seg_len
    for _ in range(30):
        err = seg_arc(coef, seg_quad[i], tau) - target
        if abs(err) < 1e-14 * max(seg_len, 1e-12):
            break
        sp = seg_speed(coef, tau)
        if sp < 1e-15:
            break
        tau -= err / sp
        if tau < 0.0:
            tau = 0.0
        elif tau > 1.0:
            tau = 1.0
    return i, tau


@njit(cache=True)
def path_eval(seg_coef, seg_cum, seg_quad, theta):
    """Point, unit tangent, and tangent derivative at arc-length theta.

    Returns (pos(2), n(2), dn(2)) with n = ds/dtheta and dn = d2s/dtheta2
    (the curvature vector).
    """
    i, tau = theta_to_seg_tau(seg_coef, seg_cum, seg_quad, theta)
    coef = seg_coef[i]
    pos = seg_point(coef, tau)
    d1 = seg_d1(coef, tau)
    d2 = seg_d2(coef, tau)
    sp2 = d1[0] * d1[0] + d1[1] * d1[1]
    if sp2 < 1e-30:
        n = np.zeros(2)
        n[0] = 1.0
        return pos, n, np.zeros(2)
    sp = np.sqrt(sp2)
    n = d1 / sp
    proj = (d1[0] * d2[0] + d1[1] * d2[1]) / sp2
    dn = (d2 - proj * d1) / sp2
    return pos, n, dn


@njit(cache=True)
def path_eval_batch(seg_coef, seg_cum, seg_quad, thetas):
    out = np.empty((thetas.shape[0], 2))
    for k in range(thetas.shape[0]):
        pos, _, _ = path_eval(seg_coef, seg_cum, seg_quad, thetas[k])
        out[k, 0] = pos[0]
        out[k, 1] = pos[1]
    return out


# --- dynamics ----------------------------------------------------------------


@njit(cache=True)
def euler_step(x, u, dt):
    out = np.empty(NX)
    out[0] = x[0] + x[2] * dt
    out[1] = x[1] + x[3] * dt
    out[2] = x[2] + u[0] * dt
    out[3] = x[3] + u[1] * dt
    out[4] = x[4] + u[2] * dt
    out[5] = x[5] + u[3] * dt
    return out


@njit(cache=True)
def rollout(x0, U, dt):
    N = U.shape[0]
    X = np.empty((N + 1, NX))
    X[0] = x0
    for k in range(N):
        X[k + 1] = euler_step(X[k], U[k], dt)
    return X


def sensitivity_blocks(dt, N):
    """P[m] = A^m B for the Euler system; x_k = A^k x0 + sum_j P[k-1-j] u_j."""
    A = np.eye(NX)
    A[0, 2] = dt
    A[1, 3] = dt
    B = np.zeros((NX, NU))
    B[2, 0] = dt
    B[3, 1] = dt
    B[4, 2] = dt
    B[5, 3] = dt
    P = np.zeros((N, NX, NU))
    P[0] = B
    for m in range(1, N):
        P[m] = A @ P[m - 1]
    return P


# --- stage cost --------------------------------------------------------------
#
# weights layout w = [lag, contour, force, proximity, intensity, progress,
#                     progress_rate]
# em layout = [F0, h, stiffness_c]
# Per-stage cost term order in breakdowns:
#   [lag, contour, force, proximity, intensity, progress, progress_rate, input]

W_LAG, W_CON, W_FRC, W_PRX, W_INT, W_PRG, W_PRT = 0, 1, 2, 3, 4, 5, 6


@njit(cache=True)
def stage_state_terms(x, pen, seg_coef, seg_cum, seg_quad, em, w):
    """State-dependent stage cost, its gradient, and curvature data.

    Returns (J, gx(6), pack(20), Hn(6,6)). pack holds the residual values
    and Jacobian entries needed for the Gauss-Newton blocks:
      [0]  lag                 [1]  dlag/dtheta
      [2:4] contour residual   [4:6] d(contour)/dtheta
      [6:8] force residual     [8:12] -dFact/dpm (row major)
      [12:14] -dFact/dalpha    [14:16] dFdes/dtheta
      [16:18] magnet-pen vector
      [18] theta (raw)         [19] alpha
    Hn carries the exact second-order (residual-curvature) terms of the
    force cost, which Gauss-Newton alone misses badly once the achievable
    force saturates and the residual stays large.
    """
    F0, h, c_stiff = em[0], em[1], em[2]
    L = seg_cum[seg_cum.shape[0] - 1]
    theta = x[5]
    th = min(max(theta, 0.0), L)
    pos, n, dn = path_eval(seg_coef, seg_cum, seg_quad, th)

    r0 = pos[0] - pen[0]
    r1 = pos[1] - pen[1]
    lag = r0 * n[0] + r1 * n[1]
    dlag = n[0] * n[0] + n[1] * n[1] + r0 * dn[0] + r1 * dn[1]
    ec0 = r0 - lag * n[0]
    ec1 = r1 - lag * n[1]
    dec0 = n[0] - dlag * n[0] - lag * dn[0]
    dec1 = n[1] - dlag * n[1] - lag * dn[1]

    dv0 = x[0] - pen[0]
    dv1 = x[1] - pen[1]
    d2 = dv0 * dv0 + dv1 * dv1
    h2 = h * h
    uu = d2 / h2
    base = 1.0 + uu
    gprof = (4.0 - uu) / (h * base**3.5)
    dg_dd2 = (2.5 * uu - 15.0) / (h * base**4.5) / h2
    d2g_dd2 = (70.0 - 8.75 * uu) / (h * base**5.5) / (h2 * h2)
    alpha = x[4]

    fdes0 = c_stiff * F0 * r0
    fdes1 = c_stiff * F0 * r1
    fact0 = alpha * F0 * gprof * dv0
    fact1 = alpha * F0 * gprof * dv1
    res0 = fdes0 - fact0
    res1 = fdes1 - fact1

    # -dFact/dpm = -(alpha F0) * (gprof I + 2 dg_dd2 dv dv^T)
    aF0 = alpha * F0
    j00 = -aF0 * (gprof + 2.0 * dg_dd2 * dv0 * dv0)
    j01 = -aF0 * (2.0 * dg_dd2 * dv0 * dv1)
    j10 = j01
    j11 = -aF0 * (gprof + 2.0 * dg_dd2 * dv1 * dv1)
    # -dFact/dalpha
    ja0 = -F0 * gprof * dv0
    ja1 = -F0 * gprof * dv1
    # dFdes/dtheta
    jt0 = c_stiff * F0 * n[0]
    jt1 = c_stiff * F0 * n[1]

    J = (
        w[W_LAG] * lag * lag
        + w[W_CON] * (ec0 * ec0 + ec1 * ec1)
        + w[W_FRC] * (res0 * res0 + res1 * res1)
        + w[W_PRX] * d2
        + w[W_INT] * alpha * alpha
        - w[W_PRG] * theta
    )

    gx = np.zeros(NX)
    gx[0] = 2.0 * w[W_FRC] * (res0 * j00 + res1 * j10) + 2.0 * w[W_PRX] * dv0
    gx[1] = 2.0 * w[W_FRC] * (res0 * j01 + res1 * j11) + 2.0 * w[W_PRX] * dv1
    gx[4] = 2.0 * w[W_FRC] * (res0 * ja0 + res1 * ja1) + 2.0 * w[W_INT] * alpha
    gx[5] = (
        2.0 * w[W_LAG] * lag * dlag
        + 2.0 * w[W_CON] * (ec0 * dec0 + ec1 * dec1)
        + 2.0 * w[W_FRC] * (res0 * jt0 + res1 * jt1)
        - w[W_PRG]
    )

    # sum_i res_i * d2(res_i); res = Fdes - Fact
    Hn = np.zeros((NX, NX))
    rd = res0 * dv0 + res1 * dv1
    tf = 2.0 * w[W_FRC]
    resv = np.empty(2)
    resv[0] = res0
    resv[1] = res1
    dvv = np.empty(2)
    dvv[0] = dv0
    dvv[1] = dv1
    for jj in range(2):
        for kk in range(2):
            delta = 1.0 if jj == kk else 0.0
            t_pp = -aF0 * (
                2.0 * dg_dd2 * (resv[jj] * dvv[kk] + resv[kk] * dvv[jj] + delta * rd)
                + 4.0 * d2g_dd2 * rd * dvv[jj] * dvv[kk]
            )
            Hn[jj, kk] += tf * t_pp
        t_pa = -F0 * (gprof * resv[jj] + 2.0 * dg_dd2 * rd * dvv[jj])
        Hn[jj, 4] += tf * t_pa
        Hn[4, jj] += tf * t_pa
    Hn[5, 5] += tf * c_stiff * F0 * (res0 * dn[0] + res1 * dn[1])

    pack = np.empty(20)
    pack[0] = lag
    pack[1] = dlag
    pack[2] = ec0
    pack[3] = ec1
    pack[4] = dec0
    pack[5] = dec1
    pack[6] = res0
    pack[7] = res1
    pack[8] = j00
    pack[9] = j01
    pack[10] = j10
    pack[11] = j11
    pack[12] = ja0
    pack[13] = ja1
    pack[14] = jt0
    pack[15] = jt1
    pack[16] = dv0
    pack[17] = dv1
    pack[18] = theta
    pack[19] = alpha
    return J, gx, pack, Hn


@njit(cache=True)
def stage_breakdown(x, pen, seg_coef, seg_cum, seg_quad, em, w):
    """Weighted per-term costs for one stage (length 8)."""
    J, gx, p, _ = stage_state_terms(x, pen, seg_coef, seg_cum, seg_quad, em, w)
    out = np.zeros(8)
    out[0] = w[W_LAG] * p[0] * p[0]
    out[1] = w[W_CON] * (p[2] * p[2] + p[3] * p[3])
    out[2] = w[W_FRC] * (p[6] * p[6] + p[7] * p[7])
    out[3] = w[W_PRX] * (p[16] * p[16] + p[17] * p[17])
    out[4] = w[W_INT] * p[19] * p[19]
    out[5] = -w[W_PRG] * p[18]
    return out


@njit(cache=True)
def horizon_eval(
    U, x0, pens, prev_trate, dt, gamma,
    seg_coef, seg_cum, seg_quad, em, w, R, P, want,
):
    """Objective over the horizon; optionally gradient and GN Hessian.

    want: 0 = cost only, 1 = + gradient, 2 = + gradient + Gauss-Newton
    Hessian. Returns (cost, grad(N*4), H(N*4, N*4), breakdown(N+1, 8)).
    """
    N = U.shape[0]
    nv = N * NU
    X = rollout(x0, U, dt)
    cost = 0.0
    grad = np.zeros(nv)
    H = np.zeros((nv, nv))
    breakdown = np.zeros((N + 1, 8))
    # residual-row workspace lifted to input space (max 8 state rows)
    Wrows = np.empty((8, nv))

    gam = 1.0
    for k in range(N + 1):
        J, gx, pack, Hn = stage_state_terms(
            X[k], pens[k], seg_coef, seg_cum, seg_quad, em, w
        )
        cost += gam * J
        breakdown[k, 0] = gam * w[W_LAG] * pack[0] * pack[0]
        breakdown[k, 1] = gam * w[W_CON] * (pack[2] ** 2 + pack[3] ** 2)
        breakdown[k, 2] = gam * w[W_FRC] * (pack[6] ** 2 + pack[7] ** 2)
        breakdown[k, 3] = gam * w[W_PRX] * (pack[16] ** 2 + pack[17] ** 2)
        breakdown[k, 4] = gam * w[W_INT] * pack[19] ** 2
        breakdown[k, 5] = -gam * w[W_PRG] * pack[18]

        if k < N:
            trd = U[k, 3] - (prev_trate if k == 0 else U[k - 1, 3])
            cost += gam * w[W_PRT] * trd * trd
            breakdown[k, 6] = gam * w[W_PRT] * trd * trd
            uin = (
                R[0] * (U[k, 0] ** 2 + U[k, 1] ** 2)
                + R[1] * U[k, 2] ** 2
                + R[2] * U[k, 3] ** 2
            )
            cost += gam * uin
            breakdown[k, 7] = gam * uin

        if want >= 1:
            # lift state gradient: dJ/du_j += P[k-1-j]^T gx
            if k >= 1:
                for j in range(k):
                    Pm = P[k - 1 - j]
                    for c in range(NU):
                        acc = 0.0
                        for rrow in range(NX):
                            acc += Pm[rrow, c] * gx[rrow]
                        grad[j * NU + c] += gam * acc
            if k < N:
                trd = U[k, 3] - (prev_trate if k == 0 else U[k - 1, 3])
                grad[k * NU + 3] += gam * 2.0 * w[W_PRT] * trd
                if k >= 1:
                    grad[(k - 1) * NU + 3] -= gam * 2.0 * w[W_PRT] * trd
                grad[k * NU + 0] += gam * 2.0 * R[0] * U[k, 0]
                grad[k * NU + 1] += gam * 2.0 * R[0] * U[k, 1]
                grad[k * NU + 2] += gam * 2.0 * R[1] * U[k, 2]
                grad[k * NU + 3] += gam * 2.0 * R[2] * U[k, 3]

        if want >= 2:
            if k >= 1:
                # residual Jacobian rows w.r.t. x_k, scaled by sqrt(gam * w)
                # row 0: lag; rows 1-2: contour; rows 3-4: force;
                # rows 5-6: proximity; row 7: intensity
                Jx = np.zeros((8, NX))
                sl = np.sqrt(2.0 * gam * w[W_LAG])
                sc = np.sqrt(2.0 * gam * w[W_CON])
                sf = np.sqrt(2.0 * gam * w[W_FRC])
                sd = np.sqrt(2.0 * gam * w[W_PRX])
                sa = np.sqrt(2.0 * gam * w[W_INT])
                Jx[0, 5] = sl * pack[1]
                Jx[1, 5] = sc * pack[4]
                Jx[2, 5] = sc * pack[5]
                Jx[3, 0] = sf * pack[8]
                Jx[3, 1] = sf * pack[9]
                Jx[3, 4] = sf * pack[12]
                Jx[3, 5] = sf * pack[14]
                Jx[4, 0] = sf * pack[10]
                Jx[4, 1] = sf * pack[11]
                Jx[4, 4] = sf * pack[13]
                Jx[4, 5] = sf * pack[15]
                Jx[5, 0] = sd
                Jx[6, 1] = sd
                Jx[7, 4] = sa
                ncols = k * NU
                for rrow in range(8):
                    for c in range(ncols):
                        Wrows[rrow, c] = 0.0
                for j in range(k):
                    Pm = P[k - 1 - j]
                    for rrow in range(8):
                        for c in range(NU):
                            acc = 0.0
                            for s in range(NX):
                                acc += Jx[rrow, s] * Pm[s, c]
                            Wrows[rrow, j * NU + c] = acc
                for rrow in range(8):
                    for a in range(ncols):
                        va = Wrows[rrow, a]
                        if va == 0.0:
                            continue
                        for b in range(a, ncols):
                            H[a, b] += va * Wrows[rrow, b]
                # exact residual-curvature terms (force cost), lifted
                for j1 in range(k):
                    PHn = P[k - 1 - j1].T @ Hn  # (4, 6)
                    for j2 in range(j1, k):
                        M = gam * (PHn @ P[k - 1 - j2])  # (4, 4)
                        r0c = j1 * NU
                        c0c = j2 * NU
                        if j1 == j2:
                            for a in range(NU):
                                for b in range(NU):
                                    if r0c + a <= c0c + b:
                                        H[r0c + a, c0c + b] += M[a, b]
                        else:
                            for a in range(NU):
                                for b in range(NU):
                                    H[r0c + a, c0c + b] += M[a, b]
            if k < N:
                # input penalty (exact quadratic)
                H[k * NU + 0, k * NU + 0] += gam * 2.0 * R[0]
                H[k * NU + 1, k * NU + 1] += gam * 2.0 * R[0]
                H[k * NU + 2, k * NU + 2] += gam * 2.0 * R[1]
                H[k * NU + 3, k * NU + 3] += gam * 2.0 * R[2]
                # progress-rate smoothness couples u_k and u_{k-1}
                sprt2 = gam * 2.0 * w[W_PRT]
                a = k * NU + 3
                H[a, a] += sprt2
                if k >= 1:
                    b = (k - 1) * NU + 3
                    H[b, b] += sprt2
                    if b < a:
                        H[b, a] -= sprt2
                    else:
                        H[a, b] -= sprt2
        gam *= gamma

    if want >= 2:
        for a in range(nv):
            for b in range(a):
                H[a, b] = H[b, a]
    return cost, grad, H, breakdown


# --- QP solver: primal-dual interior point -------------------------------------
#
# minimize 0.5 z'Hz + g'z  subject to  lz <= A z <= uz.
# Infeasible-start Mehrotra predictor-corrector with direct factorizations;
# robust to the huge curvature spread of the force terms, deterministic.


@njit(cache=True)
def _chol_solve(Lc, b):
    n = b.shape[0]
    y = np.empty(n)
    for i in range(n):
        acc = b[i]
        for j in range(i):
            acc -= Lc[i, j] * y[j]
        y[i] = acc / Lc[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for j in range(i + 1, n):
            acc -= Lc[j, i] * x[j]
        x[i] = acc / Lc[i, i]
    return x


@njit(cache=True)
def ipm_qp(H, g, A, lz, uz, max_iter, tol):
    """Solve the doubly-bounded QP; returns (z, iters, rprim, rdual).

    Slack variables on both bound sides; the Newton system is condensed to
    M = H + A' diag(lam/s) A and solved by Cholesky (with an escalating
    ridge if the reduced Hessian is on the edge of definiteness).
    """
    n = H.shape[0]
    m = A.shape[0]
    z = np.zeros(n)
    Az = A @ z
    # decoupled strictly-positive slack/dual initialization
    sl = np.empty(m)
    su = np.empty(m)
    ll = np.ones(m)
    lu = np.ones(m)
    for i in range(m):
        sl[i] = max(Az[i] - lz[i], 1.0)
        su[i] = max(uz[i] - Az[i], 1.0)
    gscale = 1.0 + np.abs(g).max()

    it = 0
    rprim = np.inf
    rdual = np.inf
    for it in range(1, max_iter + 1):
        Az = A @ z
        # residuals
        rd = H @ z + g + A.T @ (lu - ll)
        rpl = Az - sl - lz
        rpu = Az + su - uz
        mu = (sl @ ll + su @ lu) / (2.0 * m)
        rprim = max(np.abs(rpl).max(), np.abs(rpu).max())
        rdual = np.abs(rd).max()
        if rprim < tol and rdual < tol * gscale and mu < tol:
            break

        d = ll / sl + lu / su
        Aw = A * np.sqrt(d).reshape(m, 1)
        M = H + Aw.T @ Aw
        ridge = 1e-12 * (1.0 + np.abs(M).max())
        Lc = np.empty((n, n))
        for _ in range(12):
            ok = True
            K = M + ridge * np.eye(n)
            # manual cholesky with failure detection
            for irow in range(n):
                for jcol in range(irow + 1):
                    acc = K[irow, jcol]
                    for kk in range(jcol):
                        acc -= Lc[irow, kk] * Lc[jcol, kk]
                    if irow == jcol:
                        if acc <= 0.0:
                            ok = False
                            break
                        Lc[irow, jcol] = np.sqrt(acc)
                    else:
                        Lc[irow, jcol] = acc / Lc[jcol, jcol]
                if not ok:
                    break
            if ok:
                break
            ridge *= 100.0

        # affine (predictor) direction: sigma = 0
        rhs = -rd - A.T @ (ll / sl * rpl + ll) - A.T @ (lu / su * rpu + lu) \
            + A.T @ (ll + lu)
        # rebuild rhs carefully:
        #   dll = -ll - (ll/sl)(A dz + rpl) + sigma*mu/sl
        #   dlu = -lu + (lu/su)(A dz + rpu) + sigma*mu/su
        # dual eq: H dz + A'(dlu - dll) = -rd
        # => (H + A'DA) dz = -rd - A'[ (lu/su)rpu - lu + (ll/sl)rpl + ll ]
        #    + sigma*mu*A'(1/sl - 1/su)   ... assembled below per sigma
        base = -(rd + A.T @ ((lu / su) * rpu - lu + (ll / sl) * rpl + ll))
        dz_aff = _chol_solve(Lc, base)
        Adz = A @ dz_aff
        dsl = Adz + rpl
        dsu = -(Adz + rpu)
        dll = -ll - (ll / sl) * dsl
        dlu = -lu - (lu / su) * dsu

        # affine step length and centering parameter
        alpha_aff = 1.0
        for i in range(m):
            if dsl[i] < 0:
                alpha_aff = min(alpha_aff, -sl[i] / dsl[i])
            if dsu[i] < 0:
                alpha_aff = min(alpha_aff, -su[i] / dsu[i])
            if dll[i] < 0:
                alpha_aff = min(alpha_aff, -ll[i] / dll[i])
            if dlu[i] < 0:
                alpha_aff = min(alpha_aff, -lu[i] / dlu[i])
        mu_aff = ((sl + alpha_aff * dsl) @ (ll + alpha_aff * dll)
                  + (su + alpha_aff * dsu) @ (lu + alpha_aff * dlu)) / (2.0 * m)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.1

        # corrector direction with centering + Mehrotra second-order terms
        corr_l = (sigma * mu - dsl * dll) / sl
        corr_u = (sigma * mu - dsu * dlu) / su
        rhs = base + A.T @ (corr_l - corr_u)
        dz = _chol_solve(Lc, rhs)
        Adz = A @ dz
        dsl = Adz + rpl
        dsu = -(Adz + rpu)
        dll = -ll - (ll / sl) * dsl + (sigma * mu - dsl * dll) / sl
        dlu = -lu - (lu / su) * dsu + (sigma * mu - dsu * dlu) / su

        alpha = 1.0
        for i in range(m):
            if dsl[i] < 0:
                alpha = min(alpha, -sl[i] / dsl[i])
            if dsu[i] < 0:
                alpha = min(alpha, -su[i] / dsu[i])
            if dll[i] < 0:
                alpha = min(alpha, -ll[i] / dll[i])
            if dlu[i] < 0:
                alpha = min(alpha, -lu[i] / dlu[i])
        alpha = min(1.0, 0.99 * alpha)
        z = z + alpha * dz
        sl = sl + alpha * dsl
        su = su + alpha * dsu
        ll = ll + alpha * dll
        lu = lu + alpha * dlu
    return z, it, rprim, rdual
