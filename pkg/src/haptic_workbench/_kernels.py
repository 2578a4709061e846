"""Compiled numeric core shared by the public hand-sim, tactile and control APIs.

Everything here works on packed float arrays so that the per-millisecond
trial loop can run inside one jitted function. The public modules wrap these
kernels; there is a single implementation of each physical rule.

Packed layouts
--------------
geom[f]   : bx, by, psi0, sign, L1, L2, L3, lo1..3, hi1..3, c_mid, c_dist, plane, r_tip
planes[k] : a, b, p  (a <= 0 marks an absent cross-section)
objp      : stiffness, mu, load
tprm      : window, gain, r_max, scale, noise_sigma
prm       : dt, k_v, k_r, v_max, np_rate, b_trans, b_rot
ctlp      : see the C_* indices below
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

G_BX, G_BY, G_PSI, G_SIGN, G_L, G_LO, G_HI, G_C, G_PLANE, G_R = 0, 1, 2, 3, 4, 7, 10, 13, 15, 16
GEOM_COLS = 17

T_WINDOW, T_GAIN, T_RMAX, T_SCALE, T_SIGMA = range(5)
P_DT, P_KV, P_KR, P_VMAX, P_NPRATE, P_BT, P_BR = range(7)

(C_FKP, C_FKI, C_FKD, C_FINT, C_AKP, C_AKI, C_AKD, C_AOUT, C_AINT, C_FMIN,
 C_THR, C_FTOUCH, C_VAPP, C_VWRAP, C_TOL, C_HOLD, C_HANDOVER, C_NPTOL) = range(18)
CTLP_SIZE = 18

# controller state layout
S_HL, S_LL_TH, S_LL_MID = 0, 3, 6
S_CONTACT = 9  # two flags
S_COUNTER = 11
S_LATCH = 12  # three flags
S_WRAP_REC = 15  # nine recorded wrap joints
S_FREEZE = 24  # four frozen non-proximal targets
CTL_SIZE = 28

PH_APPROACH, PH_STABILIZE, PH_SQUEEZE, PH_WRAP = 1, 2, 3, 4
EV_NONE, EV_DONE, EV_DROP = 0, 1, 2

# trace columns
(TR_T, TR_PHASE, TR_FTH, TR_FMID, TR_RTH, TR_RMID, TR_ALPHA, TR_AREF, TR_G, TR_GREF,
 TR_VTH, TR_VMID, TR_HELD, TR_D) = range(14)
TRACE_COLS = 14

N_TAX = 12
_GOLD = 0.6180339887498949


# --------------------------------------------------------------------------
# kinematics


@njit(cache=True)
def fk_finger(geom, f, joints, pts):
    """Fill pts (4, 2) with base, two knuckles and tip centre; return tip angle."""
    x = geom[f, G_BX]
    y = geom[f, G_BY]
    ang = geom[f, G_PSI]
    s = geom[f, G_SIGN]
    pts[0, 0] = x
    pts[0, 1] = y
    for i in range(3):
        ang += s * joints[3 * f + i]
        x += geom[f, G_L + i] * math.cos(ang)
        y += geom[f, G_L + i] * math.sin(ang)
        pts[i + 1, 0] = x
        pts[i + 1, 1] = y
    return ang


@njit(cache=True)
def fan_angle(psi_tip, sign, beta):
    """World angle of the fingertip surface direction at fan angle beta."""
    return psi_tip + sign * (0.5 * math.pi - beta)


# --------------------------------------------------------------------------
# superellipse geometry


@njit(cache=True)
def se_point(theta, a, b, p):
    c = math.cos(theta)
    s = math.sin(theta)
    rr = (abs(c) / a) ** p + (abs(s) / b) ** p
    rad = rr ** (-1.0 / p)
    return rad * c, rad * s


@njit(cache=True)
def se_implicit(x, y, a, b, p):
    return (abs(x) / a) ** p + (abs(y) / b) ** p


@njit(cache=True)
def _dist2(theta, px, py, a, b, p):
    qx, qy = se_point(theta, a, b, p)
    return (px - qx) ** 2 + (py - qy) ** 2


@njit(cache=True)
def closest_point(px, py, a, b, p, warm):
    """Nearest boundary point of |x/a|^p + |y/b|^p = 1 to (px, py).

    Returns (theta, qx, qy, signed_distance, nx, ny, curvature); signed
    distance is negative inside, (nx, ny) is the outward unit normal at q.
    """
    n_scan = 72
    lo_span = -math.pi
    span = 2.0 * math.pi
    if not math.isnan(warm):
        n_scan = 13
        lo_span = warm - 0.3
        span = 0.6
    h = span / n_scan
    best = 0
    best_f = 1e300
    for i in range(n_scan + 1):
        f = _dist2(lo_span + i * h, px, py, a, b, p)
        if f < best_f:
            best_f = f
            best = i
    if not math.isnan(warm) and (best == 0 or best == n_scan):
        return closest_point(px, py, a, b, p, math.nan)
    lo = lo_span + (best - 1) * h
    hi = lo_span + (best + 1) * h
    x1 = hi - _GOLD * (hi - lo)
    x2 = lo + _GOLD * (hi - lo)
    f1 = _dist2(x1, px, py, a, b, p)
    f2 = _dist2(x2, px, py, a, b, p)
    for _ in range(28):
        if f1 < f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - _GOLD * (hi - lo)
            f1 = _dist2(x1, px, py, a, b, p)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + _GOLD * (hi - lo)
            f2 = _dist2(x2, px, py, a, b, p)
    theta = 0.5 * (lo + hi)
    qx, qy = se_point(theta, a, b, p)
    dist = math.sqrt((px - qx) ** 2 + (py - qy) ** 2)
    if se_implicit(px, py, a, b, p) < 1.0:
        dist = -dist
    ax = abs(qx)
    ay = abs(qy)
    fx = p * ax ** (p - 1.0) / a ** p
    fy = p * ay ** (p - 1.0) / b ** p
    if qx < 0:
        fx = -fx
    if qy < 0:
        fy = -fy
    gn = math.sqrt(fx * fx + fy * fy)
    nx = fx / gn
    ny = fy / gn
    if p < 2.0 and (ax < 1e-12 or ay < 1e-12):
        kappa = 1e3
    else:
        fxx = p * (p - 1.0) * ax ** (p - 2.0) / a ** p
        fyy = p * (p - 1.0) * ay ** (p - 2.0) / b ** p
        kappa = min((fxx * fy * fy + fyy * fx * fx) / gn ** 3, 1e3)
    return theta, qx, qy, dist, nx, ny, kappa


# --------------------------------------------------------------------------
# contacts


@njit(cache=True)
def _local_depth(px, py, qx, qy, nx, ny, kappa):
    """Depth of (px, py) below the osculating circle at q (positive inside)."""
    dx = px - qx
    dy = py - qy
    h = -(dx * nx + dy * ny)
    st = -dx * ny + dy * nx
    return (2.0 * h - kappa * (h * h + st * st)) / (
        1.0 + math.sqrt((1.0 - kappa * h) ** 2 + (kappa * st) ** 2))


@njit(cache=True)
def _fan_depth(beta, tx, ty, psi_o, sign, r, qx, qy, nx, ny, kappa):
    ang = fan_angle(psi_o, sign, beta)
    return _local_depth(tx + r * math.cos(ang), ty + r * math.sin(ang), qx, qy, nx, ny, kappa)


@njit(cache=True)
def _taxel_score(beta, bi, window, tx, ty, psi_o, sign, r, qx, qy, nx, ny, kappa):
    return _fan_depth(beta, tx, ty, psi_o, sign, r, qx, qy, nx, ny, kappa) * (
        1.0 - abs(beta - bi) / window)


@njit(cache=True)
def finger_contact(geom, f, joints, pose, planes, beta, window, delta, pts, nrm, warm):
    """Per-taxel penetration of finger f against the object; returns the warm start.

    Each taxel reports the peak indentation inside its triangular receptive
    field on the fingertip circle. delta (12,), pts (12, 2) and nrm (12, 2)
    are filled in hand coordinates.
    """
    kin = np.empty((4, 2))
    psi = fk_finger(geom, f, joints, kin)
    sign = geom[f, G_SIGN]
    r = geom[f, G_R]
    tx = kin[3, 0]
    ty = kin[3, 1]
    for i in range(N_TAX):
        ang = fan_angle(psi, sign, beta[i])
        delta[i] = 0.0
        pts[i, 0] = tx + r * math.cos(ang)
        pts[i, 1] = ty + r * math.sin(ang)
        nrm[i, 0] = math.cos(ang)
        nrm[i, 1] = math.sin(ang)
    plane = int(geom[f, G_PLANE])
    a = planes[plane, 0]
    b = planes[plane, 1]
    p = planes[plane, 2]
    if a <= 0.0:
        return math.nan
    # tip centre in the object frame
    cphi = math.cos(pose[2])
    sphi = math.sin(pose[2])
    rx = tx - pose[0]
    ry = ty - pose[1]
    ox = cphi * rx + sphi * ry
    oy = -sphi * rx + cphi * ry
    if abs(ox) > a + r or abs(oy) > b + r:
        return math.nan
    theta, qx, qy, dist, nx, ny, kappa = closest_point(ox, oy, a, b, p, warm)
    if dist >= r:
        return theta
    psi_o = psi - pose[2]
    # fan angle of the deepest tip point (direction -n)
    dir_ang = math.atan2(-ny, -nx)
    bc = 0.5 * math.pi - sign * (dir_ang - psi_o)
    bc = (bc + math.pi) % (2.0 * math.pi) - math.pi
    for i in range(N_TAX):
        bi = beta[i]
        target = min(max(bc, bi - window), bi + window)
        if _fan_depth(target, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa) <= 0.0:
            continue
        lo = min(bi, target)
        hi = max(bi, target)
        if hi - lo < 1e-12:
            best = _taxel_score(bi, bi, window, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa)
        else:
            x1 = hi - _GOLD * (hi - lo)
            x2 = lo + _GOLD * (hi - lo)
            f1 = _taxel_score(x1, bi, window, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa)
            f2 = _taxel_score(x2, bi, window, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa)
            for _ in range(22):
                if f1 > f2:
                    hi = x2
                    x2 = x1
                    f2 = f1
                    x1 = hi - _GOLD * (hi - lo)
                    f1 = _taxel_score(x1, bi, window, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa)
                else:
                    lo = x1
                    x1 = x2
                    f1 = f2
                    x2 = lo + _GOLD * (hi - lo)
                    f2 = _taxel_score(x2, bi, window, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa)
            best = max(f1, f2)
            # endpoints are not visited by the golden search
            best = max(best, _taxel_score(lo, bi, window, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa))
            best = max(best, _taxel_score(hi, bi, window, ox, oy, psi_o, sign, r, qx, qy, nx, ny, kappa))
        if best > 0.0:
            delta[i] = best
    return theta


@njit(cache=True)
def contacts_all(geom, joints, pose, planes, beta, window, active, delta, pts, nrm, warm):
    for f in range(5):
        if active[f]:
            warm[f] = finger_contact(geom, f, joints, pose, planes, beta, window,
                                     delta[f], pts[f], nrm[f], warm[f])
        else:
            for i in range(N_TAX):
                delta[f, i] = 0.0


@njit(cache=True)
def finger_force(delta, pts, nrm, k):
    """Force the finger exerts on the object and its application point."""
    fx = 0.0
    fy = 0.0
    wsum = 0.0
    cx = 0.0
    cy = 0.0
    for i in range(N_TAX):
        fi = k * delta[i]
        fx += fi * nrm[i, 0]
        fy += fi * nrm[i, 1]
        wsum += delta[i]
        cx += delta[i] * pts[i, 0]
        cy += delta[i] * pts[i, 1]
    if wsum > 0.0:
        cx /= wsum
        cy /= wsum
    return fx, fy, cx, cy, wsum


# --------------------------------------------------------------------------
# dynamics


@njit(cache=True)
def integrate(geom, joints, pose, flags, volts, np_targets, delta, pts, nrm, objp, prm):
    """Advance joints and object by one explicit Euler step.

    np_targets is (5, 2); flags = [held, dropped]. Contact quantities are
    those resolved at the start of the step.
    """
    dt = prm[P_DT]
    k = objp[0]
    for f in range(5):
        s = geom[f, G_SIGN]
        bx = geom[f, G_BX]
        by = geom[f, G_BY]
        tau = 0.0
        for i in range(N_TAX):
            if delta[f, i] > 0.0:
                fi = k * delta[f, i]
                rx = pts[f, i, 0] - bx
                ry = pts[f, i, 1] - by
                tau += s * (rx * fi * nrm[f, i, 1] - ry * fi * nrm[f, i, 0])
        v = min(max(volts[f], -prm[P_VMAX]), prm[P_VMAX])
        j = 3 * f
        joints[j] += dt * (prm[P_KV] * v - prm[P_KR] * tau)
        step_max = prm[P_NPRATE] * dt
        for m in range(2):
            err = np_targets[f, m] - joints[j + 1 + m]
            joints[j + 1 + m] += min(max(err, -step_max), step_max)
        for m in range(3):
            joints[j + m] = min(max(joints[j + m], geom[f, G_LO + m]), geom[f, G_HI + m])
    if flags[0] > 0.5 or flags[1] > 0.5:
        return
    update_object(pose, flags, delta, pts, nrm, objp, prm)


@njit(cache=True)
def update_object(pose, flags, delta, pts, nrm, objp, prm):
    """Quasi-static object motion under the two grasp contacts, with slip check.

    Contact friction absorbs the net force perpendicular to the squeeze axis
    and the in-plane moment up to mu * (total normal force) (times the contact
    half-span for the moment); only the excess and the along-axis imbalance
    move the object.
    """
    k = objp[0]
    mu = objp[1]
    f0x, f0y, c0x, c0y, w0 = finger_force(delta[0], pts[0], nrm[0], k)
    f1x, f1y, c1x, c1y, w1 = finger_force(delta[1], pts[1], nrm[1], k)
    n0 = math.sqrt(f0x * f0x + f0y * f0y)
    n1 = math.sqrt(f1x * f1x + f1y * f1y)
    normal_sum = n0 + n1
    if mu * normal_sum < objp[2]:
        flags[1] = 1.0
        return
    if normal_sum == 0.0:
        return
    fx = f0x + f1x
    fy = f0y + f1y
    ux = f0x - f1x
    uy = f0y - f1y
    un = math.sqrt(ux * ux + uy * uy)
    if un == 0.0:
        # identical forces: no squeeze axis, push along the resultant
        ux = fx
        uy = fy
        un = math.sqrt(ux * ux + uy * uy)
    ux /= un
    uy /= un
    along = fx * ux + fy * uy
    px = fx - along * ux
    py = fy - along * uy
    perp = math.sqrt(px * px + py * py)
    cap = mu * normal_sum
    scale = 0.0
    if perp > cap:
        scale = 1.0 - cap / perp
    moment = 0.0
    for f in range(2):
        for i in range(N_TAX):
            if delta[f, i] > 0.0:
                fi = k * delta[f, i]
                moment += (pts[f, i, 0] - pose[0]) * fi * nrm[f, i, 1] - (
                    pts[f, i, 1] - pose[1]) * fi * nrm[f, i, 0]
    span = 0.0
    if w0 > 0.0 and w1 > 0.0:
        span = 0.5 * math.sqrt((c0x - c1x) ** 2 + (c0y - c1y) ** 2)
    m_cap = cap * span
    m_eff = 0.0
    if abs(moment) > m_cap:
        m_eff = moment - math.copysign(m_cap, moment)
    dt = prm[P_DT]
    pose[0] += dt * (along * ux + scale * px) / prm[P_BT]
    pose[1] += dt * (along * uy + scale * py) / prm[P_BT]
    pose[2] += dt * m_eff / prm[P_BR]


# --------------------------------------------------------------------------
# tactile


@njit(cache=True)
def pressures(delta, k, spread, noise, tprm, out):
    gain = tprm[T_GAIN]
    for i in range(N_TAX):
        acc = 0.0
        for j in range(N_TAX):
            acc += spread[i, j] * gain * k * delta[j]
        acc += tprm[T_SIGMA] * noise[i]
        out[i] = min(max(acc, 0.0), tprm[T_RMAX])


@njit(cache=True)
def force_vector(p, beta, scale):
    """Response-weighted sum of taxel normals in the fingertip frame (pad, axis)."""
    fx = 0.0
    fy = 0.0
    for i in range(N_TAX):
        fx += p[i] * math.cos(beta[i])
        fy += p[i] * math.sin(beta[i])
    return scale * fx, scale * fy


# --------------------------------------------------------------------------
# control


@njit(cache=True)
def pid_update(kp, ki, kd, out_clamp, int_clamp, integral, prev_err, has_prev, err, dt):
    """One PID step with clamped integral and output; returns (u, integral, prev).

    The integral is frozen while the output is saturated and the step would
    drive it further into saturation (conditional integration anti-windup).
    """
    deriv = (err - prev_err) / dt if has_prev else 0.0
    trial = min(max(integral + err * dt, -int_clamp), int_clamp)
    u = kp * err + ki * trial + kd * deriv
    pushing = ki * (trial - integral)
    if not ((u > out_clamp and pushing > 0.0) or (u < -out_clamp and pushing < 0.0)):
        integral = trial
    u = kp * err + ki * integral + kd * deriv
    u = min(max(u, -out_clamp), out_clamp)
    return u, integral, err


@njit(cache=True)
def _pid_slot(ctl, slot, kp, ki, kd, out_clamp, int_clamp, err, dt):
    u, integral, prev = pid_update(kp, ki, kd, out_clamp, int_clamp, ctl[slot],
                                   ctl[slot + 1], ctl[slot + 2] > 0.5, err, dt)
    ctl[slot] = integral
    ctl[slot + 1] = prev
    ctl[slot + 2] = 1.0
    return u


@njit(cache=True)
def allocate(g_ref, u, f_min):
    return max(g_ref + 0.5 * u, f_min), max(g_ref - 0.5 * u, f_min)


@njit(cache=True)
def alpha_angle(c1x, c1y, c2x, c2y, ax, ay, bx, by):
    ox = 0.5 * (ax + bx)
    oy = 0.5 * (ay + by)
    vx = 0.5 * (c1x + c2x) - ox
    vy = 0.5 * (c1y + c2y) - oy
    wx = bx - ox
    wy = by - oy
    if vx == 0.0 and vy == 0.0:
        return math.nan
    return math.atan2(abs(vx * wy - vy * wx), vx * wx + vy * wy)


@njit(cache=True)
def _contact_point(geom, f, joints, delta, pts):
    w = 0.0
    cx = 0.0
    cy = 0.0
    for i in range(N_TAX):
        w += delta[i]
        cx += delta[i] * pts[i, 0]
        cy += delta[i] * pts[i, 1]
    if w > 0.0:
        return cx / w, cy / w
    kin = np.empty((4, 2))
    psi = fk_finger(geom, f, joints, kin)
    ang = fan_angle(psi, geom[f, G_SIGN], 0.0)
    r = geom[f, G_R]
    return kin[3, 0] + r * math.cos(ang), kin[3, 1] + r * math.sin(ang)


@njit(cache=True)
def _coupled(geom, f, joints, out, m0):
    lo = geom[f, G_LO]
    for m in range(2):
        v = geom[f, G_LO + 1 + m] + geom[f, G_C + m] * (joints[3 * f] - lo)
        out[m0 + m] = min(max(v, geom[f, G_LO + 1 + m]), geom[f, G_HI + 1 + m])


@njit(cache=True)
def run_chunk(phase, n_steps, t0, joints, pose, flags, geom, planes, objp, beta, tprm,
              spread, prm, ctlp, g_ref, alpha_ref, np_ref, ctl, noise, trace, last_p, warm):
    """Run up to n_steps of one exploration phase; returns (steps_done, event)."""
    dt = prm[P_DT]
    k = objp[0]
    active = np.zeros(5, dtype=np.bool_)
    active[0] = True
    active[1] = True
    if phase == PH_WRAP:
        for f in range(2, 5):
            active[f] = True
    delta = np.zeros((5, N_TAX))
    pts = np.zeros((5, N_TAX, 2))
    nrm = np.zeros((5, N_TAX, 2))
    p = np.zeros((5, N_TAX))
    fm = np.zeros(5)
    volts = np.zeros(5)
    npt = np.zeros((5, 2))
    ax = geom[0, G_BX]
    ay = geom[0, G_BY]
    bx = geom[1, G_BX]
    by = geom[1, G_BY]
    thr = ctlp[C_THR]
    for step in range(n_steps):
        contacts_all(geom, joints, pose, planes, beta, tprm[T_WINDOW], active, delta, pts, nrm, warm)
        for f in range(5):
            if active[f]:
                pressures(delta[f], k, spread, noise[step, f], tprm, p[f])
                fx, fy = force_vector(p[f], beta, tprm[T_SCALE])
                fm[f] = math.sqrt(fx * fx + fy * fy)
            else:
                fm[f] = 0.0
        c1x, c1y = _contact_point(geom, 0, joints, delta[0], pts[0])
        c2x, c2y = _contact_point(geom, 1, joints, delta[1], pts[1])
        alpha = alpha_angle(c1x, c1y, c2x, c2y, ax, ay, bx, by)
        g = 0.5 * (fm[0] + fm[1])
        for f in range(5):
            volts[f] = 0.0
            npt[f, 0] = joints[3 * f + 1]
            npt[f, 1] = joints[3 * f + 2]
        fr0 = 0.0
        fr1 = 0.0
        done = False
        if phase == PH_APPROACH:
            for f in range(2):
                if ctl[S_CONTACT + f] < 0.5 and fm[f] > thr:
                    ctl[S_CONTACT + f] = 1.0
                    ctl[S_FREEZE + 2 * f] = joints[3 * f + 1]
                    ctl[S_FREEZE + 2 * f + 1] = joints[3 * f + 2]
                if ctl[S_CONTACT + f] > 0.5:
                    fr = ctlp[C_FTOUCH]
                    volts[f] = _pid_slot(ctl, S_LL_TH + 3 * f, ctlp[C_FKP], ctlp[C_FKI], ctlp[C_FKD],
                                         prm[P_VMAX], ctlp[C_FINT], fr - fm[f], dt)
                    npt[f, 0] = ctl[S_FREEZE + 2 * f]
                    npt[f, 1] = ctl[S_FREEZE + 2 * f + 1]
                else:
                    volts[f] = ctlp[C_VAPP]
                    _coupled(geom, f, joints, npt[f], 0)
            done = ctl[S_CONTACT] > 0.5 and ctl[S_CONTACT + 1] > 0.5
        else:
            # the operator lets go only once both fingers bear the grip, not just their mean
            if flags[0] > 0.5 and min(fm[0], fm[1]) >= ctlp[C_HANDOVER] * g_ref:
                flags[0] = 0.0
            u = 0.0
            if flags[0] < 0.5:
                # beyond 2*(g_ref - f_min) the allocation floor saturates first
                u_max = min(ctlp[C_AOUT], 2.0 * max(g_ref - ctlp[C_FMIN], 0.0))
                u = _pid_slot(ctl, S_HL, ctlp[C_AKP], ctlp[C_AKI], ctlp[C_AKD], u_max,
                              ctlp[C_AINT], alpha_ref - alpha, dt)
            fr0, fr1 = allocate(g_ref, u, ctlp[C_FMIN])
            volts[0] = _pid_slot(ctl, S_LL_TH, ctlp[C_FKP], ctlp[C_FKI], ctlp[C_FKD], prm[P_VMAX],
                                 ctlp[C_FINT], fr0 - fm[0], dt)
            volts[1] = _pid_slot(ctl, S_LL_MID, ctlp[C_FKP], ctlp[C_FKI], ctlp[C_FKD], prm[P_VMAX],
                                 ctlp[C_FINT], fr1 - fm[1], dt)
            npt[0, 0] = np_ref[0]
            npt[0, 1] = np_ref[1]
            npt[1, 0] = np_ref[2]
            npt[1, 1] = np_ref[3]
            if phase == PH_STABILIZE:
                track = 0.0
                for f in range(2):
                    for m in range(2):
                        track = max(track, abs(joints[3 * f + 1 + m] - np_ref[2 * f + m]))
                if flags[0] < 0.5 and abs(alpha_ref - alpha) < ctlp[C_TOL] and track < ctlp[C_NPTOL]:
                    ctl[S_COUNTER] += 1.0
                else:
                    ctl[S_COUNTER] = 0.0
            elif phase == PH_WRAP:
                n_latched = 0
                for w in range(3):
                    f = 2 + w
                    if ctl[S_LATCH + w] < 0.5:
                        at_limit = joints[3 * f] >= geom[f, G_HI] - 1e-9
                        if fm[f] > thr or at_limit:
                            ctl[S_LATCH + w] = 1.0
                            for m in range(3):
                                ctl[S_WRAP_REC + 3 * w + m] = joints[3 * f + m]
                        else:
                            volts[f] = ctlp[C_VWRAP]
                            _coupled(geom, f, joints, npt[f], 0)
                    if ctl[S_LATCH + w] > 0.5:
                        n_latched += 1
                done = n_latched == 3
        row = trace[step]
        row[TR_T] = t0 + step * dt
        row[TR_PHASE] = phase
        row[TR_FTH] = fm[0]
        row[TR_FMID] = fm[1]
        row[TR_RTH] = fr0
        row[TR_RMID] = fr1
        row[TR_ALPHA] = alpha
        row[TR_AREF] = alpha_ref
        row[TR_G] = g
        row[TR_GREF] = g_ref
        row[TR_VTH] = volts[0]
        row[TR_VMID] = volts[1]
        row[TR_HELD] = flags[0]
        kin_a = np.empty((4, 2))
        kin_b = np.empty((4, 2))
        fk_finger(geom, 0, joints, kin_a)
        fk_finger(geom, 1, joints, kin_b)
        row[TR_D] = math.sqrt((kin_a[3, 0] - kin_b[3, 0]) ** 2 + (kin_a[3, 1] - kin_b[3, 1]) ** 2)
        for f in range(5):
            for i in range(N_TAX):
                last_p[f, i] = p[f, i]
        if done and phase in (PH_APPROACH, PH_WRAP):
            return step, EV_DONE
        integrate(geom, joints, pose, flags, volts, npt, delta, pts, nrm, objp, prm)
        if flags[1] > 0.5:
            return step + 1, EV_DROP
        if phase == PH_STABILIZE and ctl[S_COUNTER] >= ctlp[C_HOLD]:
            return step + 1, EV_DONE
    return n_steps, EV_NONE
