"""Pure-Python implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them line for
line and the test suite checks that both backends agree.
"""
from __future__ import annotations

import math

import numpy as np

# Phase codes returned by delta_v_sim.
NO_COLLISION = 0
PHASE_FRONT_STOPPED = 1
PHASE_MUTUAL_BRAKING = 2
PHASE_REACTION = 3


def _rear_state(t, v_r, rho, a_accel, a_brake):
    if t <= rho:
        return v_r * t + 0.5 * a_accel * t * t, v_r + a_accel * t
    x1 = v_r * rho + 0.5 * a_accel * rho * rho
    v1 = v_r + a_accel * rho
    tb = min(t - rho, v1 / a_brake)
    return x1 + v1 * tb - 0.5 * a_brake * tb * tb, v1 - a_brake * tb


def _front_state(t, v_f, a_brake):
    tb = min(t, v_f / a_brake)
    return v_f * tb - 0.5 * a_brake * tb * tb, v_f - a_brake * tb


def delta_v_sim(v_r, v_f, d_a, rho, a_accel, a_min_brake, a_max_brake, dt):
    """Step the RSS deceleration scenario until the gap turns negative.

    Returns ``(phase, delta_v, t_collision)``; phase is ``NO_COLLISION`` when
    both vehicles stop with a non-negative gap.
    """
    t2 = rho + (v_r + a_accel * rho) / a_min_brake
    t3 = v_f / a_max_brake
    t_end = max(t2, t3)
    k = 0
    while True:
        k += 1
        t = k * dt
        xr, vr = _rear_state(t, v_r, rho, a_accel, a_min_brake)
        xf, vf = _front_state(t, v_f, a_max_brake)
        if d_a + xf - xr < 0.0:
            if t <= rho:
                phase = PHASE_REACTION
            elif t >= t3:
                phase = PHASE_FRONT_STOPPED
            else:
                phase = PHASE_MUTUAL_BRAKING
            return phase, vr - vf, t
        if t > t_end:
            return NO_COLLISION, 0.0, t


def rss_min_distance(v_r, v_f, rho, a_accel, a_min_brake, a_max_brake):
    v_resp = v_r + rho * a_accel
    d = (
        v_r * rho
        + 0.5 * a_accel * rho * rho
        + v_resp * v_resp / (2.0 * a_min_brake)
        - v_f * v_f / (2.0 * a_max_brake)
    )
    return d if d > 0.0 else 0.0


def rss_follow_sim(s_front, v_front, s_ego0, v_ego0, blind_steps, dt,
                   rho, a_accel, a_min_brake, a_max_brake, j_max, a_limit):
    """RSS ego following a prescribed front trajectory, blind for a while.

    ``s_front``/``v_front`` give the front vehicle's rear bumper position and
    speed at t = k*dt. The ego (front bumper ``s_ego0``) perceives nothing
    for the first ``blind_steps`` steps and cruises. Returns
    ``(collided, delta_v, step)``.
    """
    n = len(s_front)
    s_e = s_ego0
    v_e = v_ego0
    a_prev = 0.0
    alert = -1
    jerk_step = j_max * dt
    rho_eps = rho - 1e-9
    for k in range(n):
        gap = s_front[k] - s_e
        if gap <= 0.0:
            return True, v_e - v_front[k], k
        if k == n - 1:
            break
        demand = 0.0
        if k >= blind_steps:
            d_min = rss_min_distance(v_e, v_front[k], rho, a_accel, a_min_brake, a_max_brake)
            if gap <= d_min:
                if alert < 0:
                    alert = k
                if (k - alert) * dt >= rho_eps:
                    demand = -a_min_brake
        a = demand
        if a > a_prev + jerk_step:
            a = a_prev + jerk_step
        elif a < a_prev - jerk_step:
            a = a_prev - jerk_step
        if a > a_limit:
            a = a_limit
        elif a < -a_limit:
            a = -a_limit
        v_next = v_e + a * dt
        if v_next < 0.0:
            # stops inside the step
            if a < 0.0:
                s_e += v_e * v_e / (-2.0 * a)
            v_e = 0.0
        else:
            s_e += v_e * dt + 0.5 * a * dt * dt
            v_e = v_next
        a_prev = a
    return False, 0.0, n - 1


def iou_matrix_2d(a, b):
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    out = np.zeros((len(a), len(b)))
    for i in range(len(a)):
        ax1, ay1, ax2, ay2 = a[i]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(len(b)):
            bx1, by1, bx2, by2 = b[j]
            iw = min(ax2, bx2) - max(ax1, bx1)
            ih = min(ay2, by2) - max(ay1, by1)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (bx2 - bx1) * (by2 - by1) - inter
            out[i, j] = inter / union if union > 0.0 else 0.0
    return out


def iou_matrix_3d(a, b):
    """Volumetric IoU of axis-aligned boxes given as (cx, cy, cz, l, w, h)."""
    a = np.asarray(a, dtype=float).reshape(-1, 6)
    b = np.asarray(b, dtype=float).reshape(-1, 6)
    out = np.zeros((len(a), len(b)))
    for i in range(len(a)):
        ca = a[i, :3]
        ha = a[i, 3:] / 2.0
        vol_a = a[i, 3] * a[i, 4] * a[i, 5]
        for j in range(len(b)):
            cb = b[j, :3]
            hb = b[j, 3:] / 2.0
            inter = 1.0
            for d in range(3):
                lo = max(ca[d] - ha[d], cb[d] - hb[d])
                hi = min(ca[d] + ha[d], cb[d] + hb[d])
                if hi <= lo:
                    inter = 0.0
                    break
                inter *= hi - lo
            if inter == 0.0:
                continue
            union = vol_a + b[j, 3] * b[j, 4] * b[j, 5] - inter
            out[i, j] = inter / union if union > 0.0 else 0.0
    return out


def greedy_match(iou, threshold):
    """Greedy assignment, highest IoU first; ties go to the lowest (row, col).

    Returns an (k, 2) int array of matched (row, col) pairs in match order.
    """
    iou = np.array(iou, dtype=float, copy=True).reshape(len(iou), -1) if len(iou) else np.zeros((0, 0))
    n, m = iou.shape
    pairs = []
    row_used = [False] * n
    col_used = [False] * m
    while True:
        best = -math.inf
        bi = bj = -1
        for i in range(n):
            if row_used[i]:
                continue
            for j in range(m):
                if col_used[j]:
                    continue
                v = iou[i, j]
                if v > best:
                    best = v
                    bi, bj = i, j
        if bi < 0 or best < threshold:
            break
        pairs.append((bi, bj))
        row_used[bi] = True
        col_used[bj] = True
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)
