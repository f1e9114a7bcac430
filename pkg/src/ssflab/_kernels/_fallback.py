"""Pure numpy implementations of the hot kernels."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def banded_ldlt_pivots(ab: np.ndarray, breakdown_floor: float = 0.0):
    ab = np.array(ab, dtype=np.float64, order="C", copy=True)
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    pivots = np.zeros(n)
    for j in range(n):
        d = ab[0, j]
        w = min(bw, n - 1 - j)
        if w > 0:
            col = ab[1 : 1 + w, j]
            if np.any(col != 0.0):
                if not np.isfinite(d) or abs(d) <= breakdown_floor:
                    return pivots, j
                # rank-1 trailing update, band columns only:
                # ab[r, j+1+c] -= col[r+c] * col[c] / d  for r + c <= w - 1
                z = np.concatenate([col, np.zeros(w)])
                hank = sliding_window_view(z, w)[:w]  # (w, w), hank[r, c] = col[r+c]
                ab[:w, j + 1 : j + 1 + w] -= hank * (col / d)[None, :]
        pivots[j] = d
    bad = ~np.isfinite(pivots)
    if bad.any():
        return pivots, int(np.argmax(bad))
    return pivots, -1


def bridge_positions(normals: np.ndarray, t: float) -> np.ndarray:
    B, steps, d = normals.shape
    m = steps + 1
    dt = t / m
    u = np.zeros((B, m + 1, d))
    for k in range(m - 1):
        tau = t - k * dt
        coef = 1.0 - dt / tau
        sig = math.sqrt(dt * (tau - dt) / tau)
        u[:, k + 1] = u[:, k] * coef + sig * normals[:, k]
    return u


def _eval_spec(spec, pts: np.ndarray) -> np.ndarray:
    # pts (N, d) -> (N,); mirrors PotentialField.evaluate for the structured forms
    code = spec.code
    if code == 0:
        return np.zeros(pts.shape[0])
    if code == 1:
        return np.full(pts.shape[0], spec.f0)
    if code == 2:
        ang = pts[:, None, :] * spec.arr1[None, :, :]
        return spec.f0 + np.cos(ang).prod(axis=2) @ spec.arr2
    if code == 3:
        lo, hi = spec.arr1[0], spec.arr1[1]
        inside = ((pts > lo) & (pts < hi)).all(axis=1)
        return spec.f0 * inside.astype(np.float64)
    if code == 4:
        v = (pts - spec.arr1[0]) / spec.arr1[1]
        inside = np.abs(v) < 1.0
        w = np.zeros_like(v)
        vi = v[inside]
        w[inside] = np.exp(1.0 - 1.0 / (1.0 - vi * vi))
        return spec.f0 * w.prod(axis=1)
    return np.asarray(spec.fn(pts), dtype=np.float64)


def chain_block(normals, t, x_node, x0_shift, u_spec, v_spec, box):
    u = bridge_positions(normals, t)
    pos = u + x_node
    B, mp1, d = pos.shape
    m = mp1 - 1
    dt = t / m
    weights = np.full(mp1, dt)
    weights[0] = weights[-1] = 0.5 * dt

    flat = pos.reshape(-1, d)
    if u_spec.code == 0:
        a = np.zeros(B)
    else:
        a = _eval_spec(u_spec, flat + x0_shift).reshape(B, mp1) @ weights
    if v_spec.code == 0:
        b = np.zeros(B)
    else:
        b = _eval_spec(v_spec, flat).reshape(B, mp1) @ weights
    if box is None:
        inside = np.ones(B, dtype=np.uint8)
    else:
        lo, hi = box[0], box[1]
        inside = ((pos > lo) & (pos < hi)).all(axis=(1, 2)).astype(np.uint8)
    return a, b, inside


def band_survival_block(u: np.ndarray, r: float, dt: float) -> np.ndarray:
    B, mp1 = u.shape
    inside = np.abs(u) < r
    alive = inside.all(axis=1)
    a = u[:, :-1]
    b = u[:, 1:]
    W = 2.0 * r
    two_over = 2.0 / dt
    # two-barrier stay probability for each slice (image series, |j| <= 2)
    q = 1.0 - np.exp(-two_over * (a + r) * (b + r))
    for j in (-2, -1, 1, 2):
        jW = j * W
        q += np.exp(-two_over * jW * (jW - (b - a)))
        q -= np.exp(-two_over * (a + r - jW) * (b + r - jW))
    np.clip(q, 0.0, 1.0, out=q)
    surv = q.prod(axis=1)
    surv[~alive] = 0.0
    return surv
