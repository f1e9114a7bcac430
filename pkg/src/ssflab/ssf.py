"""The relative counting function as a curve, and its averaged quantities.

An exact curve comes from merging the two dense spectra into a jump
representation; a sampled curve evaluates the relative count on an energy
grid through inertia. Averages against weights chi_I * g use adaptive Simpson
on each constancy interval (exact mode) or the trapezoid rule on the probe
grid (sampled mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .eigencount import (
    ORACLE_CAP_DEFAULT,
    dense_spectrum,
    relative_count,
    relative_count_flagged,
)
from .lattice import DirichletOperator

EXACT = "exact"
SAMPLED = "sampled"


@dataclass(frozen=True, eq=False)
class SSFCurve:
    """Right-continuous integer step function E -> xi_L(E).

    Exact mode stores jump locations and the value on [e_i, e_{i+1}); sampled
    mode stores probe energies and the counted value at each probe (held
    constant to the right when evaluated between probes).
    """

    mode: str
    energies: np.ndarray
    values: np.ndarray
    L: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (EXACT, SAMPLED):
            raise ValueError(f"unknown curve mode {self.mode!r}")
        if len(self.energies) != len(self.values):
            raise ValueError("energies and values must align")

    def __call__(self, E: float) -> float:
        idx = int(np.searchsorted(self.energies, E, side="right")) - 1
        return 0.0 if idx < 0 else float(self.values[idx])

    def probed_span(self) -> tuple[float, float]:
        if self.mode == EXACT:
            return (-math.inf, math.inf)
        return (float(self.energies[0]), float(self.energies[-1]))

    def max_spacing(self) -> float:
        if len(self.energies) < 2:
            return 0.0
        return float(np.diff(self.energies).max())


def ssf_curve(
    op1: DirichletOperator,
    op0: DirichletOperator,
    probe="exact",
    cap: int = ORACLE_CAP_DEFAULT,
) -> SSFCurve:
    """Build the curve for the operator pair, exactly or on a probe grid."""
    if op1.grid != op0.grid:
        raise ValueError("operators live on different grids")
    meta = {"h": op1.grid.h, "d": op1.grid.d, "tag1": op1.potential_tag, "tag0": op0.potential_tag}
    if isinstance(probe, str) and probe == EXACT:
        lam0 = dense_spectrum(op0, cap=cap)
        lam1 = dense_spectrum(op1, cap=cap)
        energies = np.concatenate([lam0, lam1])
        steps = np.concatenate([np.ones_like(lam0), -np.ones_like(lam1)])
        order = np.argsort(energies, kind="stable")
        energies, steps = energies[order], steps[order]
        uniq, start = np.unique(energies, return_index=True)
        net = np.add.reduceat(steps, start)
        values = np.cumsum(net)
        return SSFCurve(EXACT, uniq, values, L=op1.grid.L, meta=meta)
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 1 or len(probe) == 0 or np.any(np.diff(probe) <= 0):
        raise ValueError("probe grid must be a strictly increasing 1d array")
    vals = np.empty(len(probe))
    flagged = []
    for i, E in enumerate(probe):
        v, flag = relative_count_flagged(op1, op0, float(E))
        vals[i] = v
        if flag:
            flagged.append(float(E))
    meta["coincident_probes"] = tuple(flagged)
    return SSFCurve(SAMPLED, probe, vals, L=op1.grid.L, meta=meta)


@dataclass(frozen=True)
class WeightFunction:
    """Weight f = chi_[E_lo, E_hi] * g with a continuous factor g."""

    E_lo: float
    E_hi: float
    g: Callable[[float], float] | None = None  # None means g == 1
    label: str = "1"

    def g_at(self, E: float) -> float:
        return 1.0 if self.g is None else float(self.g(E))


def constant_weight(E_lo: float, E_hi: float, c: float = 1.0) -> WeightFunction:
    if c == 1.0:
        return WeightFunction(E_lo, E_hi, None, "1")
    return WeightFunction(E_lo, E_hi, lambda E: c, f"const:{c}")


def poly_weight(E_lo: float, E_hi: float, coeffs: Sequence[float]) -> WeightFunction:
    cs = tuple(float(c) for c in coeffs)
    return WeightFunction(
        E_lo, E_hi, lambda E: sum(c * E**k for k, c in enumerate(cs)), f"poly:{cs}"
    )


def exp_weight(E_lo: float, E_hi: float, rate: float, scale: float = 1.0) -> WeightFunction:
    return WeightFunction(
        E_lo, E_hi, lambda E: scale * math.exp(rate * E), f"exp:{scale}*e^{rate}E"
    )


def adaptive_simpson(
    g: Callable[[float], float],
    a: float,
    b: float,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-14,
    max_depth: int = 40,
) -> float:
    """Adaptive Simpson quadrature of a continuous g on [a, b]."""
    if b <= a:
        return 0.0

    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f1, f2, whole, depth):
        x1 = 0.5 * (x0 + x2)
        lm, rm = 0.5 * (x0 + x1), 0.5 * (x1 + x2)
        flm, frm = g(lm), g(rm)
        left = simpson(x0, x1, f0, flm, f1)
        right = simpson(x1, x2, f1, frm, f2)
        err = left + right - whole
        if depth >= max_depth or abs(err) <= 15.0 * max(abs_tol, rel_tol * abs(left + right)):
            return left + right + err / 15.0
        return recurse(x0, x1, f0, flm, f1, left, depth + 1) + recurse(
            x1, x2, f1, frm, f2, right, depth + 1
        )

    fa, fb = g(a), g(b)
    fm = g(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), 0)


def _exact_segments(curve: SSFCurve, lo: float, hi: float):
    """Yield (a, b, value) constancy pieces of an exact curve clipped to [lo, hi]."""
    cuts = curve.energies[(curve.energies > lo) & (curve.energies < hi)]
    xs = np.concatenate([[lo], cuts, [hi]])
    for a, b in zip(xs[:-1], xs[1:]):
        if b > a:
            yield float(a), float(b), curve(a)


def averaged_ssf(curve: SSFCurve, f: WeightFunction) -> float:
    """Integral of xi_L(E) * g(E) over the weight interval."""
    lo, hi = float(f.E_lo), float(f.E_hi)
    if hi <= lo:
        raise ValueError("weight interval is empty")
    span = curve.probed_span()
    if lo < span[0] or hi > span[1]:
        raise ValueError(f"interval [{lo}, {hi}] outside probed range {span}")
    if curve.mode == EXACT:
        total = 0.0
        for a, b, v in _exact_segments(curve, lo, hi):
            if v != 0.0:
                if f.g is None:
                    total += v * (b - a)
                else:
                    total += v * adaptive_simpson(f.g, a, b)
        return total
    # sampled: trapezoid of xi * g on the probe grid restricted to [lo, hi],
    # with held values at the clipped endpoints
    E = curve.energies
    mask = (E >= lo) & (E <= hi)
    xs = E[mask]
    ys = curve.values[mask]
    if len(xs) == 0 or xs[0] > lo:
        xs = np.concatenate([[lo], xs])
        ys = np.concatenate([[curve(lo)], ys])
    if xs[-1] < hi:
        xs = np.concatenate([xs, [hi]])
        ys = np.concatenate([ys, [curve(hi)]])
    gs = np.ones_like(xs) if f.g is None else np.array([f.g_at(x) for x in xs])
    return float(np.trapezoid(ys * gs, xs))


def averaged_error_bound(curve: SSFCurve, f: WeightFunction) -> float:
    """Grid-resolution bound for the sampled-mode trapezoid (0 for exact curves)."""
    if curve.mode == EXACT:
        return 0.0
    lo, hi = float(f.E_lo), float(f.E_hi)
    E = curve.energies
    mask = (E >= lo) & (E <= hi)
    vals = curve.values[mask]
    if len(vals) < 2:
        return math.inf
    tv = float(np.abs(np.diff(vals)).sum()) + 1.0
    gmax = 1.0 if f.g is None else max(abs(f.g_at(x)) for x in E[mask])
    return curve.max_spacing() * tv * gmax


def delta_average(curve: SSFCurve, E: float, delta: float) -> float:
    """Mean of the curve over [E, E + delta], computed from the step structure."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    lo, hi = float(E), float(E + delta)
    span = curve.probed_span()
    if lo < span[0] or hi > span[1]:
        raise ValueError(f"window [{lo}, {hi}] outside probed range {span}")
    if curve.mode == EXACT:
        total = 0.0
        for a, b, v in _exact_segments(curve, lo, hi):
            total += v * (b - a)
        return total / delta
    return averaged_ssf(curve, WeightFunction(lo, hi, None)) / delta


def laplace_transform(curve: SSFCurve, t: float) -> float:
    """Two-sided Laplace transform of an exact curve, integral of e^{-tE} xi(E) dE.

    Requires the tail value to vanish (true for curves from full spectra of a
    matrix pair, where both counts saturate at the dimension).
    """
    if curve.mode != EXACT:
        raise ValueError("laplace_transform needs an exact curve")
    if t <= 0:
        raise ValueError("t must be positive")
    if len(curve.values) and curve.values[-1] != 0:
        raise ValueError("curve does not vanish above its last jump")
    e = curve.energies
    v = curve.values[:-1]
    terms = v * (np.exp(-t * e[:-1]) - np.exp(-t * e[1:])) / t
    return float(math.fsum(terms))


def cesaro_mean(values: Sequence[float]) -> np.ndarray:
    """Running means M_K = (1/K) sum_{k<=K} values[k]."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1 or len(vals) == 0:
        raise ValueError("need a nonempty 1d sequence")
    return np.cumsum(vals) / np.arange(1, len(vals) + 1)


@dataclass(frozen=True)
class ScanPoint:
    L: float
    value: int
    running_max: int
    coincident: bool = False


def sup_scan(
    E: float,
    Ls: Sequence[float],
    build_pair: Callable[[float], tuple[DirichletOperator, DirichletOperator]],
) -> list[ScanPoint]:
    """Relative count at a single energy across box sizes, with the running max.

    The divergence mechanism this scans for (degeneracy growth lifted by the
    perturbation) operates for d >= 2 with integrable positive perturbations;
    in d = 1 the scan is expected to plateau.
    """
    out: list[ScanPoint] = []
    rmax = -(10**9)
    for L in Ls:
        op1, op0 = build_pair(float(L))
        v, flag = relative_count_flagged(op1, op0, float(E))
        rmax = max(rmax, v)
        out.append(ScanPoint(L=float(L), value=v, running_max=rmax, coincident=flag))
    return out
