# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot kernels (see _fallback for the reference)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, fabs, isfinite, sqrt

cnp.import_array()


def banded_ldlt_pivots(double[:, ::1] ab_in, double breakdown_floor=0.0):
    cdef Py_ssize_t bw = ab_in.shape[0] - 1
    cdef Py_ssize_t n = ab_in.shape[1]
    ab_arr = np.array(ab_in, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] ab = ab_arr
    piv_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] piv = piv_arr
    cdef Py_ssize_t j, w, c, r, brk = -1
    cdef double d, scale
    cdef bint nonzero
    with nogil:
        for j in range(n):
            d = ab[0, j]
            w = bw if bw < n - 1 - j else n - 1 - j
            if w > 0:
                nonzero = False
                for r in range(1, w + 1):
                    if ab[r, j] != 0.0:
                        nonzero = True
                        break
                if nonzero:
                    if not isfinite(d) or fabs(d) <= breakdown_floor:
                        brk = j
                        break
                    for c in range(w):
                        scale = ab[c + 1, j] / d
                        for r in range(w - c):
                            ab[r, j + 1 + c] -= ab[r + c + 1, j] * scale
            piv[j] = d
        if brk == -1:
            for j in range(n):
                if not isfinite(piv[j]):
                    brk = j
                    break
    return piv_arr, int(brk)


def bridge_positions(double[:, :, ::1] normals, double t):
    cdef Py_ssize_t B = normals.shape[0]
    cdef Py_ssize_t steps = normals.shape[1]
    cdef Py_ssize_t d = normals.shape[2]
    cdef Py_ssize_t m = steps + 1
    cdef double dt = t / m
    u_arr = np.zeros((B, m + 1, d), dtype=np.float64)
    cdef double[:, :, ::1] u = u_arr
    cdef Py_ssize_t i, k, ax
    cdef double tau, coef, sig
    with nogil:
        for k in range(m - 1):
            tau = t - k * dt
            coef = 1.0 - dt / tau
            sig = sqrt(dt * (tau - dt) / tau)
            for i in range(B):
                for ax in range(d):
                    u[i, k + 1, ax] = u[i, k, ax] * coef + sig * normals[i, k, ax]
    return u_arr


cdef double _eval_point(int code, double f0, double[:, ::1] arr1, double[::1] arr2,
                        double* x, Py_ssize_t d) noexcept nogil:
    cdef double val, term, v, w
    cdef Py_ssize_t k, ax
    if code == 0:
        return 0.0
    if code == 1:
        return f0
    if code == 2:
        val = f0
        for k in range(arr2.shape[0]):
            term = arr2[k]
            for ax in range(d):
                term *= cos(arr1[k, ax] * x[ax])
            val += term
        return val
    if code == 3:
        for ax in range(d):
            if x[ax] <= arr1[0, ax] or x[ax] >= arr1[1, ax]:
                return 0.0
        return f0
    # code == 4: product bump
    w = 1.0
    for ax in range(d):
        v = (x[ax] - arr1[0, ax]) / arr1[1, ax]
        if v <= -1.0 or v >= 1.0:
            return 0.0
        w *= exp(1.0 - 1.0 / (1.0 - v * v))
    return f0 * w


def chain_block(double[:, :, ::1] normals, double t,
                double[::1] x_node, double[::1] x0_shift,
                int u_code, double u_f0, double[:, ::1] u_arr1, double[::1] u_arr2,
                int v_code, double v_f0, double[:, ::1] v_arr1, double[::1] v_arr2,
                box):
    cdef Py_ssize_t B = normals.shape[0]
    cdef Py_ssize_t steps = normals.shape[1]
    cdef Py_ssize_t d = normals.shape[2]
    cdef Py_ssize_t m = steps + 1
    cdef double dt = t / m
    a_arr = np.zeros(B, dtype=np.float64)
    b_arr = np.zeros(B, dtype=np.float64)
    inside_arr = np.ones(B, dtype=np.uint8)
    cdef double[::1] a = a_arr
    cdef double[::1] b = b_arr
    cdef unsigned char[::1] inside = inside_arr
    cdef bint has_box = box is not None
    cdef double[:, ::1] box_mv
    cdef double box_lo[8]
    cdef double box_hi[8]
    cdef double disp[8]
    cdef double pos[8]
    cdef double shifted[8]
    cdef Py_ssize_t i, k, ax
    cdef double tau, coef, sig, w, au, bv
    cdef int ok
    if d > 8:
        raise ValueError("kernel supports up to 8 dimensions")
    if has_box:
        box_mv = np.ascontiguousarray(box, dtype=np.float64)
        for ax in range(d):
            box_lo[ax] = box_mv[0, ax]
            box_hi[ax] = box_mv[1, ax]
    with nogil:
        for i in range(B):
            au = 0.0
            bv = 0.0
            ok = 1
            for ax in range(d):
                disp[ax] = 0.0
            k = 0
            while True:
                for ax in range(d):
                    pos[ax] = disp[ax] + x_node[ax]
                w = dt if 0 < k < m else 0.5 * dt
                if u_code != 0:
                    for ax in range(d):
                        shifted[ax] = pos[ax] + x0_shift[ax]
                    au += w * _eval_point(u_code, u_f0, u_arr1, u_arr2, shifted, d)
                if v_code != 0:
                    bv += w * _eval_point(v_code, v_f0, v_arr1, v_arr2, pos, d)
                if has_box and ok == 1:
                    for ax in range(d):
                        if pos[ax] <= box_lo[ax] or pos[ax] >= box_hi[ax]:
                            ok = 0
                            break
                if k == m:
                    break
                if k < m - 1:
                    tau = t - k * dt
                    coef = 1.0 - dt / tau
                    sig = sqrt(dt * (tau - dt) / tau)
                    for ax in range(d):
                        disp[ax] = disp[ax] * coef + sig * normals[i, k, ax]
                else:
                    for ax in range(d):
                        disp[ax] = 0.0
                k += 1
            a[i] = au
            b[i] = bv
            inside[i] = <unsigned char> ok
    return a_arr, b_arr, inside_arr


def band_survival_block(double[:, ::1] u, double r, double dt):
    cdef Py_ssize_t B = u.shape[0]
    cdef Py_ssize_t mp1 = u.shape[1]
    out_arr = np.zeros(B, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double W = 2.0 * r
    cdef double two_over = 2.0 / dt
    cdef Py_ssize_t i, k
    cdef int j
    cdef double q, prod, aa, bb, jW
    cdef bint alive
    with nogil:
        for i in range(B):
            alive = True
            for k in range(mp1):
                if fabs(u[i, k]) >= r:
                    alive = False
                    break
            if not alive:
                out[i] = 0.0
                continue
            prod = 1.0
            for k in range(mp1 - 1):
                aa = u[i, k]
                bb = u[i, k + 1]
                q = 1.0 - exp(-two_over * (aa + r) * (bb + r))
                for j in range(-2, 3):
                    if j == 0:
                        continue
                    jW = j * W
                    q += exp(-two_over * jW * (jW - (bb - aa)))
                    q -= exp(-two_over * (aa + r - jW) * (bb + r - jW))
                if q < 0.0:
                    q = 0.0
                elif q > 1.0:
                    q = 1.0
                prod *= q
            out[i] = prod
    return out_arr
