# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline void _rear_state(double t, double v_r, double rho, double a_accel,
                             double a_brake, double* x, double* v) noexcept nogil:
    cdef double x1, v1, tb
    if t <= rho:
        x[0] = v_r * t + 0.5 * a_accel * t * t
        v[0] = v_r + a_accel * t
        return
    x1 = v_r * rho + 0.5 * a_accel * rho * rho
    v1 = v_r + a_accel * rho
    tb = t - rho
    if v1 / a_brake < tb:
        tb = v1 / a_brake
    x[0] = x1 + v1 * tb - 0.5 * a_brake * tb * tb
    v[0] = v1 - a_brake * tb


cdef inline void _front_state(double t, double v_f, double a_brake,
                              double* x, double* v) noexcept nogil:
    cdef double tb = t
    if v_f / a_brake < tb:
        tb = v_f / a_brake
    x[0] = v_f * tb - 0.5 * a_brake * tb * tb
    v[0] = v_f - a_brake * tb


def delta_v_sim(double v_r, double v_f, double d_a, double rho, double a_accel,
                double a_min_brake, double a_max_brake, double dt):
    cdef double t2 = rho + (v_r + a_accel * rho) / a_min_brake
    cdef double t3 = v_f / a_max_brake
    cdef double t_end = t2 if t2 > t3 else t3
    cdef long k = 0
    cdef double t, xr, vr, xf, vf
    cdef int phase
    while True:
        k += 1
        t = k * dt
        _rear_state(t, v_r, rho, a_accel, a_min_brake, &xr, &vr)
        _front_state(t, v_f, a_max_brake, &xf, &vf)
        if d_a + xf - xr < 0.0:
            if t <= rho:
                phase = 3
            elif t >= t3:
                phase = 1
            else:
                phase = 2
            return phase, vr - vf, t
        if t > t_end:
            return 0, 0.0, t


cdef inline double _rss_min_distance(double v_r, double v_f, double rho, double a_accel,
                                     double a_min_brake, double a_max_brake) noexcept nogil:
    cdef double v_resp = v_r + rho * a_accel
    cdef double d = (v_r * rho + 0.5 * a_accel * rho * rho
                     + v_resp * v_resp / (2.0 * a_min_brake)
                     - v_f * v_f / (2.0 * a_max_brake))
    return d if d > 0.0 else 0.0


def rss_min_distance(double v_r, double v_f, double rho, double a_accel,
                     double a_min_brake, double a_max_brake):
    return _rss_min_distance(v_r, v_f, rho, a_accel, a_min_brake, a_max_brake)


def rss_follow_sim(s_front, v_front, double s_ego0, double v_ego0, long blind_steps,
                   double dt, double rho, double a_accel, double a_min_brake,
                   double a_max_brake, double j_max, double a_limit):
    cdef double[::1] sf = np.ascontiguousarray(s_front, dtype=np.float64)
    cdef double[::1] vf = np.ascontiguousarray(v_front, dtype=np.float64)
    cdef Py_ssize_t n = sf.shape[0]
    cdef double s_e = s_ego0, v_e = v_ego0, a_prev = 0.0, a, demand, gap, d_min, v_next
    cdef long alert = -1
    cdef double jerk_step = j_max * dt
    cdef double rho_eps = rho - 1e-9
    cdef Py_ssize_t k
    for k in range(n):
        gap = sf[k] - s_e
        if gap <= 0.0:
            return True, v_e - vf[k], k
        if k == n - 1:
            break
        demand = 0.0
        if k >= blind_steps:
            d_min = _rss_min_distance(v_e, vf[k], rho, a_accel, a_min_brake, a_max_brake)
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
            if a < 0.0:
                s_e += v_e * v_e / (-2.0 * a)
            v_e = 0.0
        else:
            s_e += v_e * dt + 0.5 * a * dt * dt
            v_e = v_next
        a_prev = a
    return False, 0.0, n - 1


def iou_matrix_2d(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef double[:, ::1] B = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out_arr = np.zeros((n, m))
    cdef double[:, ::1] out = out_arr
    cdef double area_a, iw, ih, inter, union, lo, hi
    for i in range(n):
        area_a = (A[i, 2] - A[i, 0]) * (A[i, 3] - A[i, 1])
        for j in range(m):
            hi = A[i, 2] if A[i, 2] < B[j, 2] else B[j, 2]
            lo = A[i, 0] if A[i, 0] > B[j, 0] else B[j, 0]
            iw = hi - lo
            hi = A[i, 3] if A[i, 3] < B[j, 3] else B[j, 3]
            lo = A[i, 1] if A[i, 1] > B[j, 1] else B[j, 1]
            ih = hi - lo
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (B[j, 2] - B[j, 0]) * (B[j, 3] - B[j, 1]) - inter
            out[i, j] = inter / union if union > 0.0 else 0.0
    return out_arr


def iou_matrix_3d(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 6))
    cdef double[:, ::1] B = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 6))
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j, d
    out_arr = np.zeros((n, m))
    cdef double[:, ::1] out = out_arr
    cdef double vol_a, inter, lo, hi, la, lb, ua, ub, union
    for i in range(n):
        vol_a = A[i, 3] * A[i, 4] * A[i, 5]
        for j in range(m):
            inter = 1.0
            for d in range(3):
                la = A[i, d] - A[i, 3 + d] / 2.0
                ua = A[i, d] + A[i, 3 + d] / 2.0
                lb = B[j, d] - B[j, 3 + d] / 2.0
                ub = B[j, d] + B[j, 3 + d] / 2.0
                lo = la if la > lb else lb
                hi = ua if ua < ub else ub
                if hi <= lo:
                    inter = 0.0
                    break
                inter *= hi - lo
            if inter == 0.0:
                continue
            union = vol_a + B[j, 3] * B[j, 4] * B[j, 5] - inter
            out[i, j] = inter / union if union > 0.0 else 0.0
    return out_arr


def greedy_match(iou, double threshold):
    arr = np.asarray(iou, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    cdef double[:, ::1] M = np.ascontiguousarray(arr.reshape(arr.shape[0], -1))
    cdef Py_ssize_t n = M.shape[0], m = M.shape[1], i, j, bi, bj, k = 0
    cdef Py_ssize_t kmax = n if n < m else m
    row_arr = np.zeros(n, dtype=np.uint8)
    col_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] row_used = row_arr
    cdef unsigned char[::1] col_used = col_arr
    pairs_arr = np.zeros((kmax, 2), dtype=np.int64)
    cdef long long[:, ::1] pairs = pairs_arr
    cdef double best, v
    while True:
        best = -INFINITY
        bi = -1
        bj = -1
        for i in range(n):
            if row_used[i]:
                continue
            for j in range(m):
                if col_used[j]:
                    continue
                v = M[i, j]
                if v > best:
                    best = v
                    bi = i
                    bj = j
        if bi < 0 or best < threshold:
            break
        pairs[k, 0] = bi
        pairs[k, 1] = bj
        k += 1
        row_used[bi] = 1
        col_used[bj] = 1
    return pairs_arr[:k]
