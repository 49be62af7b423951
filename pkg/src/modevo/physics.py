"""Deterministic fixed-step rigid-body world for articulated module chains.

Maximal-coordinate boxes with servo-driven hinge joints, ground contact
with Coulomb friction, and ray-cast proximity sensors. Constraints are
solved with sequential velocity-level impulses (fixed iteration count,
fixed traversal order), so trajectories are bitwise reproducible.

Notes on the integrator:
- gravity and constraint impulses act on velocities; positions advance with
  the trapezoidal velocity (v0 + v1)/2 so unconstrained free fall matches
  the closed form exactly at the 0.02 s step
- the hinge servo (spring 200 N*m/rad, damping 5 N*m*s/rad) is solved as an
  implicit soft constraint, which stays stable despite the tiny module
  inertias; its impulse magnitude is not clamped
- joint limits and contacts are speculative: approach velocity is capped so
  the constraint surface is reached, not crossed, within one step
- body-body collision (non-adjacent modules only) uses inscribed spheres;
  ground collision uses the exact box corners
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import ConfigError, ContractError, SimulationDiverged
from .morphology import MODULE_HEIGHT_M, BodyPlan, HINGE_AXIS_LOCAL

PHYSICS_DT = 0.02            # seconds per step
GRAVITY = 9.81               # m/s^2, downward
MODULE_MASS = 0.1            # kg
FRICTION_MU = 0.6            # static == dynamic
SPRING_K = 200.0             # N*m/rad
SPRING_DAMP = 5.0            # N*m*s/rad
JOINT_LIMIT_RAD = math.pi / 2.0
SOLVER_ITERATIONS = 16
SERVO_MAX_SPEED = 8.0        # rad/s, drive slew limit (hobby-servo class)
BAUMGARTE_BETA = 0.2
PENETRATION_SLOP = 0.0005    # m
GROUND_MARGIN = 0.1          # m, speculative contact detection distance
PAIR_MARGIN = 0.02           # m, body-body speculative margin

_HALF = 0.5 * MODULE_HEIGHT_M
_CORNERS = np.array([[sx, sy, sz] for sx in (-1.0, 1.0)
                     for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)]) * _HALF


@njit(cache=True)
def _quat_to_mat(q, R):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(cache=True)
def _quat_mul(a, b, out):
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _apply_anchor(vel, omega, Iinv, inv_mass, p, c, rpv, rcv, imp):
    tmp = np.empty(3)
    for k in range(3):
        vel[p, k] -= imp[k] * inv_mass[p]
        vel[c, k] += imp[k] * inv_mass[c]
    _cross(rpv, imp, tmp)
    for r_ in range(3):
        s = 0.0
        for c_ in range(3):
            s += Iinv[p, r_, c_] * tmp[c_]
        omega[p, r_] -= s
    _cross(rcv, imp, tmp)
    for r_ in range(3):
        s = 0.0
        for c_ in range(3):
            s += Iinv[c, r_, c_] * tmp[c_]
        omega[c, r_] += s


@njit(cache=True)
def _solve3(K, b, out):
    # Cramer's rule; K is symmetric positive definite for our constraints
    a00, a01, a02 = K[0, 0], K[0, 1], K[0, 2]
    a10, a11, a12 = K[1, 0], K[1, 1], K[1, 2]
    a20, a21, a22 = K[2, 0], K[2, 1], K[2, 2]
    det = (a00 * (a11 * a22 - a12 * a21)
           - a01 * (a10 * a22 - a12 * a20)
           + a02 * (a10 * a21 - a11 * a20))
    if abs(det) < 1e-18:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return
    inv = 1.0 / det
    out[0] = inv * (b[0] * (a11 * a22 - a12 * a21)
                    - a01 * (b[1] * a22 - a12 * b[2])
                    + a02 * (b[1] * a21 - a11 * b[2]))
    out[1] = inv * (a00 * (b[1] * a22 - a12 * b[2])
                    - b[0] * (a10 * a22 - a12 * a20)
                    + a02 * (a10 * b[2] - b[1] * a20))
    out[2] = inv * (a00 * (a11 * b[2] - b[1] * a21)
                    - a01 * (a10 * b[2] - b[1] * a20)
                    + b[0] * (a10 * a21 - a11 * a20))


@njit(cache=True)
def _joint_angles(quat, jp, jc, rest_q, ax_c, out):
    tmp = np.empty(4)
    conj = np.empty(4)
    rel = np.empty(4)
    d = np.empty(4)
    for j in range(jp.shape[0]):
        p, c = jp[j], jc[j]
        conj[0] = quat[p, 0]
        conj[1] = -quat[p, 1]
        conj[2] = -quat[p, 2]
        conj[3] = -quat[p, 3]
        _quat_mul(conj, quat[c], rel)
        tmp[0] = rest_q[j, 0]
        tmp[1] = -rest_q[j, 1]
        tmp[2] = -rest_q[j, 2]
        tmp[3] = -rest_q[j, 3]
        _quat_mul(tmp, rel, d)
        if d[0] < 0.0:
            for k in range(4):
                d[k] = -d[k]
        tw = d[1] * ax_c[j, 0] + d[2] * ax_c[j, 1] + d[3] * ax_c[j, 2]
        out[j] = 2.0 * math.atan2(tw, d[0])


@njit(cache=True)
def _step_kernel(pos, quat, vel, omega, inv_mass, inv_ib, half,
                 jp, jc, anch_p, anch_c, ax_p, ax_c, rest_q, targets, actuated,
                 pair_a, pair_b, corners, warm_j, warm_c,
                 dt, gravity, mu, n_iter, k_spring, c_damp, beta, slop,
                 ground_margin, pair_margin, limit, drive_vmax):
    N = pos.shape[0]
    J = jp.shape[0]
    P = pair_a.shape[0]

    v0 = vel.copy()
    w0 = omega.copy()

    # external forces: gravity
    for i in range(N):
        vel[i, 2] -= gravity * dt

    # world-frame rotation matrices and inverse inertia tensors
    R = np.empty((N, 3, 3))
    Iinv = np.empty((N, 3, 3))
    for i in range(N):
        _quat_to_mat(quat[i], R[i])
        for r_ in range(3):
            for c_ in range(3):
                s = 0.0
                for k_ in range(3):
                    s += R[i, r_, k_] * inv_ib[i, k_] * R[i, c_, k_]
                Iinv[i, r_, c_] = s

    # --- joint setup ---
    theta = np.empty(J)
    _joint_angles(quat, jp, jc, rest_q, ax_c, theta)
    rp = np.empty((J, 3))
    rc = np.empty((J, 3))
    a1 = np.empty((J, 3))
    b1 = np.empty((J, 3))
    b2 = np.empty((J, 3))
    a2w = np.empty((J, 3))
    perr = np.empty((J, 3))
    Kj = np.empty((J, 3, 3))
    ang_invm = np.empty(J)
    drive_acc = np.zeros(J)
    lim_hi_acc = np.zeros(J)
    lim_lo_acc = np.zeros(J)
    align_acc = np.zeros((J, 2))
    anchor_acc = np.zeros((J, 3))
    cdot0 = np.empty(J)
    tmp3 = np.empty(3)
    tmp3b = np.empty(3)

    for j in range(J):
        p, c = jp[j], jc[j]
        for k in range(3):
            rp[j, k] = (R[p, k, 0] * anch_p[j, 0] + R[p, k, 1] * anch_p[j, 1]
                        + R[p, k, 2] * anch_p[j, 2])
            rc[j, k] = (R[c, k, 0] * anch_c[j, 0] + R[c, k, 1] * anch_c[j, 1]
                        + R[c, k, 2] * anch_c[j, 2])
            a1[j, k] = (R[p, k, 0] * ax_p[j, 0] + R[p, k, 1] * ax_p[j, 1]
                        + R[p, k, 2] * ax_p[j, 2])
            a2w[j, k] = (R[c, k, 0] * ax_c[j, 0] + R[c, k, 1] * ax_c[j, 1]
                         + R[c, k, 2] * ax_c[j, 2])
            perr[j, k] = pos[c, k] + rc[j, k] - pos[p, k] - rp[j, k]
        # orthonormal basis perpendicular to the hinge axis
        if abs(a1[j, 2]) < 0.9:
            ex, ey, ez = 0.0, 0.0, 1.0
        else:
            ex, ey, ez = 1.0, 0.0, 0.0
        bx = a1[j, 1] * ez - a1[j, 2] * ey
        by = a1[j, 2] * ex - a1[j, 0] * ez
        bz = a1[j, 0] * ey - a1[j, 1] * ex
        ln = math.sqrt(bx * bx + by * by + bz * bz)
        b1[j, 0], b1[j, 1], b1[j, 2] = bx / ln, by / ln, bz / ln
        _cross(a1[j], b1[j], tmp3)
        b2[j, 0], b2[j, 1], b2[j, 2] = tmp3[0], tmp3[1], tmp3[2]
        # angular effective mass about the axis
        s = 0.0
        for r_ in range(3):
            for c_ in range(3):
                s += a1[j, r_] * (Iinv[p, r_, c_] + Iinv[c, r_, c_]) * a1[j, c_]
        ang_invm[j] = s
        # point-constraint K matrix
        for r_ in range(3):
            for c_ in range(3):
                Kj[j, r_, c_] = 0.0
        im = inv_mass[p] + inv_mass[c]
        for r_ in range(3):
            Kj[j, r_, r_] += im
        # subtract skew(r) Iinv skew(r) for both bodies
        for body_sel in range(2):
            bidx = p if body_sel == 0 else c
            rv = rp[j] if body_sel == 0 else rc[j]
            # S = skew(rv)
            S00, S01, S02 = 0.0, -rv[2], rv[1]
            S10, S11, S12 = rv[2], 0.0, -rv[0]
            S20, S21, S22 = -rv[1], rv[0], 0.0
            # M = S * Iinv * S
            for r_ in range(3):
                if r_ == 0:
                    Sr0, Sr1, Sr2 = S00, S01, S02
                elif r_ == 1:
                    Sr0, Sr1, Sr2 = S10, S11, S12
                else:
                    Sr0, Sr1, Sr2 = S20, S21, S22
                # t = Sr * Iinv
                t0 = Sr0 * Iinv[bidx, 0, 0] + Sr1 * Iinv[bidx, 1, 0] + Sr2 * Iinv[bidx, 2, 0]
                t1_ = Sr0 * Iinv[bidx, 0, 1] + Sr1 * Iinv[bidx, 1, 1] + Sr2 * Iinv[bidx, 2, 1]
                t2_ = Sr0 * Iinv[bidx, 0, 2] + Sr1 * Iinv[bidx, 1, 2] + Sr2 * Iinv[bidx, 2, 2]
                Kj[j, r_, 0] -= t0 * S00 + t1_ * S10 + t2_ * S20
                Kj[j, r_, 1] -= t0 * S01 + t1_ * S11 + t2_ * S21
                Kj[j, r_, 2] -= t0 * S02 + t1_ * S12 + t2_ * S22
        # pre-solve relative angle rate, for speculative limits
        cdot0[j] = (a1[j, 0] * (omega[c, 0] - omega[p, 0])
                    + a1[j, 1] * (omega[c, 1] - omega[p, 1])
                    + a1[j, 2] * (omega[c, 2] - omega[p, 2]))

    # --- contact generation ---
    max_contacts = N * 8 + P
    c_b = np.empty(max_contacts, dtype=np.int64)      # movable body
    c_a = np.empty(max_contacts, dtype=np.int64)      # other body, -1 = ground
    c_pt = np.empty((max_contacts, 3))
    c_n = np.empty((max_contacts, 3))
    c_vtarget = np.empty(max_contacts)
    c_widx = np.empty(max_contacts, dtype=np.int64)  # warm-start slot
    nc = 0
    for i in range(N):
        for k in range(8):
            wx = (pos[i, 0] + R[i, 0, 0] * corners[k, 0]
                  + R[i, 0, 1] * corners[k, 1] + R[i, 0, 2] * corners[k, 2])
            wy = (pos[i, 1] + R[i, 1, 0] * corners[k, 0]
                  + R[i, 1, 1] * corners[k, 1] + R[i, 1, 2] * corners[k, 2])
            wz = (pos[i, 2] + R[i, 2, 0] * corners[k, 0]
                  + R[i, 2, 1] * corners[k, 1] + R[i, 2, 2] * corners[k, 2])
            if wz < ground_margin:
                c_b[nc] = i
                c_a[nc] = -1
                c_pt[nc, 0], c_pt[nc, 1], c_pt[nc, 2] = wx, wy, wz
                c_n[nc, 0], c_n[nc, 1], c_n[nc, 2] = 0.0, 0.0, 1.0
                # v0-based normal approach velocity at the point
                rx, ry, rz = wx - pos[i, 0], wy - pos[i, 1], wz - pos[i, 2]
                v0n = (v0[i, 2] + w0[i, 0] * ry - w0[i, 1] * rx)
                sep = wz
                if sep < 0.0:
                    pen = -sep
                    bias = (beta / dt) * (pen - slop)
                    if bias < 0.0:
                        bias = 0.0
                    c_vtarget[nc] = bias
                else:
                    c_vtarget[nc] = -2.0 * sep / dt - v0n
                c_widx[nc] = i * 8 + k
                nc += 1
    r_sphere = half
    for q_ in range(P):
        ia, ib = pair_a[q_], pair_b[q_]
        dx = pos[ib, 0] - pos[ia, 0]
        dy = pos[ib, 1] - pos[ia, 1]
        dz = pos[ib, 2] - pos[ia, 2]
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        sep = dist - 2.0 * r_sphere
        if sep < pair_margin and dist > 1e-12:
            nx, ny, nz = dx / dist, dy / dist, dz / dist
            px = 0.5 * (pos[ia, 0] + pos[ib, 0])
            py = 0.5 * (pos[ia, 1] + pos[ib, 1])
            pz = 0.5 * (pos[ia, 2] + pos[ib, 2])
            c_b[nc] = ib
            c_a[nc] = ia
            c_pt[nc, 0], c_pt[nc, 1], c_pt[nc, 2] = px, py, pz
            c_n[nc, 0], c_n[nc, 1], c_n[nc, 2] = nx, ny, nz
            rbx, rby, rbz = px - pos[ib, 0], py - pos[ib, 1], pz - pos[ib, 2]
            rax, ray, raz = px - pos[ia, 0], py - pos[ia, 1], pz - pos[ia, 2]
            vbn = ((v0[ib, 0] + w0[ib, 1] * rbz - w0[ib, 2] * rby) * nx
                   + (v0[ib, 1] + w0[ib, 2] * rbx - w0[ib, 0] * rbz) * ny
                   + (v0[ib, 2] + w0[ib, 0] * rby - w0[ib, 1] * rbx) * nz)
            van = ((v0[ia, 0] + w0[ia, 1] * raz - w0[ia, 2] * ray) * nx
                   + (v0[ia, 1] + w0[ia, 2] * rax - w0[ia, 0] * raz) * ny
                   + (v0[ia, 2] + w0[ia, 0] * ray - w0[ia, 1] * rax) * nz)
            v0n = vbn - van
            if sep < 0.0:
                bias = (beta / dt) * (-sep - slop)
                if bias < 0.0:
                    bias = 0.0
                c_vtarget[nc] = bias
            else:
                c_vtarget[nc] = -2.0 * sep / dt - v0n
            c_widx[nc] = N * 8 + q_
            nc += 1

    # contact bases and effective masses
    c_t1 = np.empty((nc, 3))
    c_t2 = np.empty((nc, 3))
    c_mn = np.empty(nc)
    c_mt1 = np.empty(nc)
    c_mt2 = np.empty(nc)
    c_ln = np.zeros(nc)
    c_lt1 = np.zeros(nc)
    c_lt2 = np.zeros(nc)
    for k in range(nc):
        n = c_n[k]
        if abs(n[2]) < 0.9:
            ex, ey, ez = 0.0, 0.0, 1.0
        else:
            ex, ey, ez = 1.0, 0.0, 0.0
        tx = n[1] * ez - n[2] * ey
        ty = n[2] * ex - n[0] * ez
        tz = n[0] * ey - n[1] * ex
        ln = math.sqrt(tx * tx + ty * ty + tz * tz)
        c_t1[k, 0], c_t1[k, 1], c_t1[k, 2] = tx / ln, ty / ln, tz / ln
        _cross(n, c_t1[k], tmp3)
        c_t2[k, 0], c_t2[k, 1], c_t2[k, 2] = tmp3[0], tmp3[1], tmp3[2]
        for d_ in range(3):
            if d_ == 0:
                axv = n
            elif d_ == 1:
                axv = c_t1[k]
            else:
                axv = c_t2[k]
            invm = 0.0
            bidx = c_b[k]
            rx = c_pt[k, 0] - pos[bidx, 0]
            ry = c_pt[k, 1] - pos[bidx, 1]
            rz = c_pt[k, 2] - pos[bidx, 2]
            _cross3_scalar(rx, ry, rz, axv, tmp3)
            invm += inv_mass[bidx]
            for r_ in range(3):
                s = 0.0
                for c_ in range(3):
                    s += Iinv[bidx, r_, c_] * tmp3[c_]
                tmp3b[r_] = s
            invm += tmp3[0] * tmp3b[0] + tmp3[1] * tmp3b[1] + tmp3[2] * tmp3b[2]
            aidx = c_a[k]
            if aidx >= 0:
                rx = c_pt[k, 0] - pos[aidx, 0]
                ry = c_pt[k, 1] - pos[aidx, 1]
                rz = c_pt[k, 2] - pos[aidx, 2]
                _cross3_scalar(rx, ry, rz, axv, tmp3)
                invm += inv_mass[aidx]
                for r_ in range(3):
                    s = 0.0
                    for c_ in range(3):
                        s += Iinv[aidx, r_, c_] * tmp3[c_]
                    tmp3b[r_] = s
                invm += tmp3[0] * tmp3b[0] + tmp3[1] * tmp3b[1] + tmp3[2] * tmp3b[2]
            m = 1.0 / invm if invm > 1e-12 else 0.0
            if d_ == 0:
                c_mn[k] = m
            elif d_ == 1:
                c_mt1[k] = m
            else:
                c_mt2[k] = m

    # warm start: re-apply last step's converged impulses so the fixed
    # iteration budget refines an already-good solution
    for j in range(J):
        p, c = jp[j], jc[j]
        if actuated[j]:
            drive_acc[j] = warm_j[j, 0]
            if drive_acc[j] != 0.0:
                _apply_ang(omega, Iinv, p, c, a1[j], drive_acc[j])
        lim_hi_acc[j] = warm_j[j, 1]
        if lim_hi_acc[j] != 0.0:
            _apply_ang(omega, Iinv, p, c, a1[j], lim_hi_acc[j])
        lim_lo_acc[j] = warm_j[j, 2]
        if lim_lo_acc[j] != 0.0:
            _apply_ang(omega, Iinv, p, c, a1[j], lim_lo_acc[j])
        for bsel in range(2):
            align_acc[j, bsel] = warm_j[j, 3 + bsel]
            if align_acc[j, bsel] != 0.0:
                bv = b1[j] if bsel == 0 else b2[j]
                _apply_ang(omega, Iinv, p, c, bv, align_acc[j, bsel])
        for k in range(3):
            anchor_acc[j, k] = warm_j[j, 5 + k]
        if (anchor_acc[j, 0] != 0.0 or anchor_acc[j, 1] != 0.0
                or anchor_acc[j, 2] != 0.0):
            _apply_anchor(vel, omega, Iinv, inv_mass, p, c, rp[j], rc[j],
                          anchor_acc[j])
    for k in range(nc):
        wi = c_widx[k]
        c_ln[k] = warm_c[wi, 0]
        c_lt1[k] = warm_c[wi, 1]
        c_lt2[k] = warm_c[wi, 2]
        if c_ln[k] != 0.0:
            _apply_contact(vel, omega, Iinv, inv_mass, pos, c_pt[k], c_n[k],
                           c_b[k], c_a[k], c_ln[k])
        if c_lt1[k] != 0.0:
            _apply_contact(vel, omega, Iinv, inv_mass, pos, c_pt[k], c_t1[k],
                           c_b[k], c_a[k], c_lt1[k])
        if c_lt2[k] != 0.0:
            _apply_contact(vel, omega, Iinv, inv_mass, pos, c_pt[k], c_t2[k],
                           c_b[k], c_a[k], c_lt2[k])
    warm_c[:, :] = 0.0

    # implicit servo-spring coefficients
    gamma = 1.0 / (dt * (c_damp + dt * k_spring))
    beta_s = dt * k_spring / (c_damp + dt * k_spring)

    wrel = np.empty(3)
    imp = np.empty(3)
    rhs = np.empty(3)
    errv = np.empty(3)

    # --- solver iterations ---
    for _ in range(n_iter):
        for j in range(J):
            p, c = jp[j], jc[j]
            # servo drive (implicit spring-damper about the axis)
            if actuated[j]:
                cd = (a1[j, 0] * (omega[c, 0] - omega[p, 0])
                      + a1[j, 1] * (omega[c, 1] - omega[p, 1])
                      + a1[j, 2] * (omega[c, 2] - omega[p, 2]))
                Cq = theta[j] - targets[j]
                bias_v = (beta_s / dt) * Cq
                # drive slew limit: the spring may not demand more relative
                # speed than a physical servo could deliver
                if bias_v > drive_vmax:
                    bias_v = drive_vmax
                elif bias_v < -drive_vmax:
                    bias_v = -drive_vmax
                m = 1.0 / (ang_invm[j] + gamma)
                dlam = -m * (cd + bias_v + gamma * drive_acc[j])
                drive_acc[j] += dlam
                _apply_ang(omega, Iinv, p, c, a1[j], dlam)
            # joint limits (speculative, one-sided)
            if ang_invm[j] > 1e-12:
                meff = 1.0 / ang_invm[j]
                cd = (a1[j, 0] * (omega[c, 0] - omega[p, 0])
                      + a1[j, 1] * (omega[c, 1] - omega[p, 1])
                      + a1[j, 2] * (omega[c, 2] - omega[p, 2]))
                vmax = 2.0 * (limit - theta[j]) / dt - cdot0[j]
                dlam = -meff * (cd - vmax)
                new = lim_hi_acc[j] + dlam
                if new > 0.0:
                    new = 0.0
                dlam = new - lim_hi_acc[j]
                lim_hi_acc[j] = new
                if dlam != 0.0:
                    _apply_ang(omega, Iinv, p, c, a1[j], dlam)
                cd = (a1[j, 0] * (omega[c, 0] - omega[p, 0])
                      + a1[j, 1] * (omega[c, 1] - omega[p, 1])
                      + a1[j, 2] * (omega[c, 2] - omega[p, 2]))
                vmin = 2.0 * (-limit - theta[j]) / dt - cdot0[j]
                dlam = -meff * (cd - vmin)
                new = lim_lo_acc[j] + dlam
                if new < 0.0:
                    new = 0.0
                dlam = new - lim_lo_acc[j]
                lim_lo_acc[j] = new
                if dlam != 0.0:
                    _apply_ang(omega, Iinv, p, c, a1[j], dlam)
            # axis alignment (2 angular DOF)
            _cross(a1[j], a2w[j], errv)
            for bsel in range(2):
                bv = b1[j] if bsel == 0 else b2[j]
                invm = 0.0
                for r_ in range(3):
                    s = 0.0
                    for c_ in range(3):
                        s += (Iinv[p, r_, c_] + Iinv[c, r_, c_]) * bv[c_]
                    tmp3b[r_] = s
                    invm += bv[r_] * tmp3b[r_]
                if invm < 1e-12:
                    continue
                cd = (bv[0] * (omega[c, 0] - omega[p, 0])
                      + bv[1] * (omega[c, 1] - omega[p, 1])
                      + bv[2] * (omega[c, 2] - omega[p, 2]))
                Ce = bv[0] * errv[0] + bv[1] * errv[1] + bv[2] * errv[2]
                dlam = -(1.0 / invm) * (cd + (beta / dt) * Ce)
                align_acc[j, bsel] += dlam
                _apply_ang(omega, Iinv, p, c, bv, dlam)
            # anchor point constraint (3 DOF)
            for k in range(3):
                rhs[k] = -((vel[c, k]
                            + (omega[c, (k + 1) % 3] * rc[j, (k + 2) % 3]
                               - omega[c, (k + 2) % 3] * rc[j, (k + 1) % 3]))
                           - (vel[p, k]
                              + (omega[p, (k + 1) % 3] * rp[j, (k + 2) % 3]
                                 - omega[p, (k + 2) % 3] * rp[j, (k + 1) % 3]))
                           + (beta / dt) * perr[j, k])
            _solve3(Kj[j], rhs, imp)
            for k in range(3):
                anchor_acc[j, k] += imp[k]
            _apply_anchor(vel, omega, Iinv, inv_mass, p, c, rp[j], rc[j], imp)

        # contacts: normal then friction
        for k in range(nc):
            bidx = c_b[k]
            aidx = c_a[k]
            vn = _rel_vel_dot(vel, omega, pos, c_pt[k], c_n[k], bidx, aidx)
            dlam = -c_mn[k] * (vn - c_vtarget[k])
            new = c_ln[k] + dlam
            if new < 0.0:
                new = 0.0
            dlam = new - c_ln[k]
            c_ln[k] = new
            if dlam != 0.0:
                _apply_contact(vel, omega, Iinv, inv_mass, pos, c_pt[k], c_n[k],
                               bidx, aidx, dlam)
            lim = mu * c_ln[k]
            for tsel in range(2):
                tv = c_t1[k] if tsel == 0 else c_t2[k]
                mt = c_mt1[k] if tsel == 0 else c_mt2[k]
                vt = _rel_vel_dot(vel, omega, pos, c_pt[k], tv, bidx, aidx)
                dlam = -mt * vt
                acc = c_lt1[k] if tsel == 0 else c_lt2[k]
                new = acc + dlam
                if new > lim:
                    new = lim
                elif new < -lim:
                    new = -lim
                dlam = new - acc
                if tsel == 0:
                    c_lt1[k] = new
                else:
                    c_lt2[k] = new
                if dlam != 0.0:
                    _apply_contact(vel, omega, Iinv, inv_mass, pos, c_pt[k], tv,
                                   bidx, aidx, dlam)

    # store converged impulses for next step's warm start
    for j in range(J):
        warm_j[j, 0] = drive_acc[j]
        warm_j[j, 1] = lim_hi_acc[j]
        warm_j[j, 2] = lim_lo_acc[j]
        warm_j[j, 3] = align_acc[j, 0]
        warm_j[j, 4] = align_acc[j, 1]
        for k in range(3):
            warm_j[j, 5 + k] = anchor_acc[j, k]
    for k in range(nc):
        warm_c[c_widx[k], 0] = c_ln[k]
        warm_c[c_widx[k], 1] = c_lt1[k]
        warm_c[c_widx[k], 2] = c_lt2[k]

    # --- integrate positions (trapezoidal velocity) ---
    qtmp = np.empty(4)
    wq = np.empty(4)
    for i in range(N):
        for k in range(3):
            pos[i, k] += dt * 0.5 * (v0[i, k] + vel[i, k])
        wq[0] = 0.0
        wq[1] = 0.5 * (w0[i, 0] + omega[i, 0])
        wq[2] = 0.5 * (w0[i, 1] + omega[i, 1])
        wq[3] = 0.5 * (w0[i, 2] + omega[i, 2])
        _quat_mul(wq, quat[i], qtmp)
        for k in range(4):
            quat[i, k] += 0.5 * dt * qtmp[k]
        ln = math.sqrt(quat[i, 0] ** 2 + quat[i, 1] ** 2
                       + quat[i, 2] ** 2 + quat[i, 3] ** 2)
        for k in range(4):
            quat[i, k] /= ln

    ok = True
    for i in range(N):
        for k in range(3):
            if not (math.isfinite(pos[i, k]) and math.isfinite(vel[i, k])
                    and math.isfinite(omega[i, k])):
                ok = False
    return theta, ok


@njit(cache=True)
def _cross3_scalar(rx, ry, rz, b, out):
    out[0] = ry * b[2] - rz * b[1]
    out[1] = rz * b[0] - rx * b[2]
    out[2] = rx * b[1] - ry * b[0]


@njit(cache=True)
def _apply_ang(omega, Iinv, p, c, axis, lam):
    for r_ in range(3):
        s = 0.0
        for c_ in range(3):
            s += Iinv[c, r_, c_] * axis[c_] * lam
        omega[c, r_] += s
        s = 0.0
        for c_ in range(3):
            s += Iinv[p, r_, c_] * axis[c_] * lam
        omega[p, r_] -= s


@njit(cache=True)
def _rel_vel_dot(vel, omega, pos, pt, d, bidx, aidx):
    rx = pt[0] - pos[bidx, 0]
    ry = pt[1] - pos[bidx, 1]
    rz = pt[2] - pos[bidx, 2]
    vx = vel[bidx, 0] + omega[bidx, 1] * rz - omega[bidx, 2] * ry
    vy = vel[bidx, 1] + omega[bidx, 2] * rx - omega[bidx, 0] * rz
    vz = vel[bidx, 2] + omega[bidx, 0] * ry - omega[bidx, 1] * rx
    if aidx >= 0:
        rx = pt[0] - pos[aidx, 0]
        ry = pt[1] - pos[aidx, 1]
        rz = pt[2] - pos[aidx, 2]
        vx -= vel[aidx, 0] + omega[aidx, 1] * rz - omega[aidx, 2] * ry
        vy -= vel[aidx, 1] + omega[aidx, 2] * rx - omega[aidx, 0] * rz
        vz -= vel[aidx, 2] + omega[aidx, 0] * ry - omega[aidx, 1] * rx
    return vx * d[0] + vy * d[1] + vz * d[2]


@njit(cache=True)
def _apply_contact(vel, omega, Iinv, inv_mass, pos, pt, d, bidx, aidx, lam):
    tmp = np.empty(3)
    rx = pt[0] - pos[bidx, 0]
    ry = pt[1] - pos[bidx, 1]
    rz = pt[2] - pos[bidx, 2]
    for k in range(3):
        vel[bidx, k] += lam * d[k] * inv_mass[bidx]
    _cross3_scalar(rx, ry, rz, d, tmp)
    for r_ in range(3):
        s = 0.0
        for c_ in range(3):
            s += Iinv[bidx, r_, c_] * tmp[c_] * lam
        omega[bidx, r_] += s
    if aidx >= 0:
        rx = pt[0] - pos[aidx, 0]
        ry = pt[1] - pos[aidx, 1]
        rz = pt[2] - pos[aidx, 2]
        for k in range(3):
            vel[aidx, k] -= lam * d[k] * inv_mass[aidx]
        _cross3_scalar(rx, ry, rz, d, tmp)
        for r_ in range(3):
            s = 0.0
            for c_ in range(3):
                s += Iinv[aidx, r_, c_] * tmp[c_] * lam
            omega[aidx, r_] -= s


def _mat_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z); Shepperd's method."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def _quat_conj_py(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _quat_mul_py(a, b):
    out = np.empty(4)
    _quat_mul(a, b, out)
    return out


class World:
    """Single-owner mutable rigid-body world. Step is deterministic given
    the initial state; many worlds may step concurrently on different
    threads (no global mutable state)."""

    def __init__(self, pos, quat, vel, omega, inv_mass, inv_ib,
                 jp, jc, anch_p, anch_c, ax_p, ax_c, rest_q, actuated):
        self.pos = pos
        self.quat = quat
        self.vel = vel
        self.omega = omega
        self.inv_mass = inv_mass
        self.inv_ib = inv_ib
        self.jp = jp
        self.jc = jc
        self.anch_p = anch_p
        self.anch_c = anch_c
        self.ax_p = ax_p
        self.ax_c = ax_c
        self.rest_q = rest_q
        self.actuated = actuated
        self.targets = np.zeros(len(jp))
        n = len(pos)
        adjacent = {(int(jp[j]), int(jc[j])) for j in range(len(jp))}
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)
                 if (a, b) not in adjacent and (b, a) not in adjacent]
        self.pair_a = np.array([p[0] for p in pairs], dtype=np.int64)
        self.pair_b = np.array([p[1] for p in pairs], dtype=np.int64)
        self.warm_j = np.zeros((len(jp), 8))
        self.warm_c = np.zeros((n * 8 + len(self.pair_a), 3))
        self.dt = PHYSICS_DT
        self.gravity = GRAVITY
        self.mu = FRICTION_MU
        self.iterations = SOLVER_ITERATIONS
        self.spring_k = SPRING_K
        self.spring_damp = SPRING_DAMP
        self.step_count = 0

    @property
    def elapsed(self) -> float:
        return self.step_count * self.dt

    @property
    def num_bodies(self) -> int:
        return len(self.pos)

    @property
    def num_joints(self) -> int:
        return len(self.jp)

    def step(self) -> None:
        """Advance exactly one physics step (0.02 s)."""
        theta, ok = _step_kernel(
            self.pos, self.quat, self.vel, self.omega, self.inv_mass,
            self.inv_ib, _HALF,
            self.jp, self.jc, self.anch_p, self.anch_c, self.ax_p, self.ax_c,
            self.rest_q, self.targets, self.actuated,
            self.pair_a, self.pair_b, _CORNERS, self.warm_j, self.warm_c,
            self.dt, self.gravity, self.mu, self.iterations,
            self.spring_k, self.spring_damp, BAUMGARTE_BETA, PENETRATION_SLOP,
            GROUND_MARGIN, PAIR_MARGIN, JOINT_LIMIT_RAD, SERVO_MAX_SPEED)
        self.step_count += 1
        if not ok:
            raise SimulationDiverged(self.step_count)

    def set_targets(self, targets_deg) -> None:
        """Store servo targets (degrees, clamped to +/-90) for the actuated
        joints; applied from the next step on."""
        targets_deg = np.asarray(targets_deg, dtype=float)
        n_act = int(self.actuated.sum())
        if targets_deg.shape != (n_act,):
            raise ContractError(
                f"expected {n_act} targets, got shape {targets_deg.shape}")
        clamped = np.radians(np.clip(targets_deg, -90.0, 90.0))
        self.targets[self.actuated] = clamped

    def joint_angles_deg(self) -> np.ndarray:
        out = np.empty(self.num_joints)
        if self.num_joints:
            _joint_angles(self.quat, self.jp, self.jc, self.rest_q, self.ax_c, out)
        return np.degrees(out)

    def body_rotations(self) -> np.ndarray:
        R = np.empty((self.num_bodies, 3, 3))
        for i in range(self.num_bodies):
            _quat_to_mat(self.quat[i], R[i])
        return R

    def min_vertex_height(self) -> float:
        R = self.body_rotations()
        verts = self.pos[:, None, :] + np.einsum("nij,kj->nki", R, _CORNERS)
        return float(verts[:, :, 2].min())

    def kinetic_energy(self) -> float:
        mass = 1.0 / self.inv_mass
        lin = 0.5 * (mass * (self.vel ** 2).sum(axis=1)).sum()
        R = self.body_rotations()
        ang = 0.0
        for i in range(self.num_bodies):
            Ib = np.diag(1.0 / self.inv_ib[i])
            Iw = R[i] @ Ib @ R[i].T
            ang += 0.5 * self.omega[i] @ Iw @ self.omega[i]
        return float(lin + ang)


def build_world(plan: BodyPlan, drop_height: float = 0.0) -> World:
    """One box body per expressed module, one actuated hinge per parent-child
    link; the assembly is placed with its lowest vertex at drop_height."""
    mods = plan.placements
    if not mods:
        raise ConfigError("cannot build a world from an empty body plan")
    n = len(mods)
    pos = np.array([m.position * MODULE_HEIGHT_M for m in mods])
    rots = [m.rotation.astype(float) for m in mods]
    quat = np.array([_mat_to_quat(R) for R in rots])
    # axis-aligned at build time: min vertex = min center - half edge
    shift = drop_height - (pos[:, 2].min() - _HALF)
    pos[:, 2] += shift
    vel = np.zeros((n, 3))
    omega = np.zeros((n, 3))
    inv_mass = np.full(n, 1.0 / MODULE_MASS)
    side = MODULE_HEIGHT_M
    inertia = (1.0 / 12.0) * MODULE_MASS * (side ** 2 + side ** 2)
    inv_ib = np.full((n, 3), 1.0 / inertia)

    joints = [i for i in range(n) if mods[i].parent_index is not None]
    J = len(joints)
    jp = np.empty(J, dtype=np.int64)
    jc = np.empty(J, dtype=np.int64)
    anch_p = np.empty((J, 3))
    anch_c = np.empty((J, 3))
    ax_p = np.empty((J, 3))
    ax_c = np.empty((J, 3))
    rest_q = np.empty((J, 4))
    actuated = np.ones(J, dtype=np.bool_)
    for j, ci in enumerate(joints):
        pi = mods[ci].parent_index
        jp[j] = pi
        jc[j] = ci
        anchor = 0.5 * (pos[pi] + pos[ci])
        anch_p[j] = rots[pi].T @ (anchor - pos[pi])
        anch_c[j] = rots[ci].T @ (anchor - pos[ci])
        axis_world = rots[ci] @ HINGE_AXIS_LOCAL
        ax_p[j] = rots[pi].T @ axis_world
        ax_c[j] = HINGE_AXIS_LOCAL
        rest_q[j] = _quat_mul_py(_quat_conj_py(quat[pi]), quat[ci])
    return World(pos, quat, vel, omega, inv_mass, inv_ib,
                 jp, jc, anch_p, anch_c, ax_p, ax_c, rest_q, actuated)


def origin_position(world: World) -> tuple:
    """Horizontal coordinates (meters) of the root module's center."""
    return float(world.pos[0, 0]), float(world.pos[0, 1])


_FACE_NORMALS_LOCAL = np.array([[0.0, 0.0, 1.0],    # Top
                                [1.0, 0.0, 0.0],    # Left
                                [-1.0, 0.0, 0.0]])  # Right
_RAY_EPS = 1e-6


def read_sensors(world: World, plan: BodyPlan) -> np.ndarray:
    """Per expressed module (depth-first order), the ray-cast distances from
    the three female face centers along the face normals, in module-heights;
    -1 when nothing is hit. Each module's own box is excluded."""
    n = world.num_bodies
    R = world.body_rotations()
    m_rays = n * 3
    origins = np.empty((m_rays, 3))
    dirs = np.empty((m_rays, 3))
    owner = np.empty(m_rays, dtype=np.int64)
    for i in range(n):
        normals_w = _FACE_NORMALS_LOCAL @ R[i].T
        for f in range(3):
            idx = i * 3 + f
            dirs[idx] = normals_w[f]
            origins[idx] = world.pos[i] + normals_w[f] * (_HALF + _RAY_EPS)
            owner[idx] = i
    best = np.full(m_rays, np.inf)
    # ground plane
    dz = dirs[:, 2]
    descending = dz < -1e-12
    t_ground = np.where(descending, -origins[:, 2] / np.where(descending, dz, 1.0), np.inf)
    best = np.minimum(best, np.where(t_ground >= 0.0, t_ground, np.inf))
    # boxes (slab test in each body frame)
    for b in range(n):
        o_local = (origins - world.pos[b]) @ R[b]
        d_local = dirs @ R[b]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / d_local
            t_lo = (-_HALF - o_local) * inv_d
            t_hi = (_HALF - o_local) * inv_d
        near = np.minimum(t_lo, t_hi)
        far = np.maximum(t_lo, t_hi)
        # parallel rays: inside slab -> (-inf, inf), outside -> miss
        parallel = np.abs(d_local) < 1e-12
        inside = np.abs(o_local) <= _HALF
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tmin = near.max(axis=1)
        tmax = far.min(axis=1)
        hit = (tmax >= tmin) & (tmax >= 0.0) & (owner != b)
        t = np.where(hit, np.maximum(tmin, 0.0), np.inf)
        best = np.minimum(best, t)
    readings = np.where(np.isinf(best), -1.0,
                        np.maximum(best + _RAY_EPS, 0.0) / MODULE_HEIGHT_M)
    # restore exact -1 for misses (the +eps above only applies to hits)
    readings[np.isinf(best)] = -1.0
    return readings.reshape(n, 3)
