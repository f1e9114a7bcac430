"""Hot numerical kernels.

The compiled extension (`_core`, Cython) is used when importable; otherwise the
vectorized numpy fallback (`_fallback`) provides the same interface. Set
SSFLAB_FORCE_FALLBACK=1 to ignore the compiled core. Backends agree to a few
ulps per sample (summation orders differ); integer outputs agree exactly.
"""

from __future__ import annotations

import importlib
import os
from dataclasses import dataclass

import numpy as np

from . import _fallback

_core = None
if not os.environ.get("SSFLAB_FORCE_FALLBACK"):
    try:
        _core = importlib.import_module("._core", __name__)
    except ImportError:
        _core = None

HAVE_CORE = _core is not None
BACKEND = "compiled" if HAVE_CORE else "fallback"

POT_ZERO = 0
POT_CONSTANT = 1
POT_COSINE = 2
POT_BOX = 3
POT_BUMP = 4
POT_CALLABLE = 5

_EMPTY2 = np.zeros((0, 0))
_EMPTY1 = np.zeros(0)


@dataclass
class PotSpec:
    """Normalized potential description consumable by both kernel backends."""

    code: int
    f0: float = 0.0
    arr1: np.ndarray = None  # cosine: omega (K,d); box: [lo; hi] (2,d); bump: [center; half] (2,d)
    arr2: np.ndarray = None  # cosine: coeffs (K,)
    fn: object = None  # code POT_CALLABLE only

    def __post_init__(self):
        if self.arr1 is None:
            self.arr1 = _EMPTY2
        if self.arr2 is None:
            self.arr2 = _EMPTY1
        self.arr1 = np.ascontiguousarray(self.arr1, dtype=np.float64)
        self.arr2 = np.ascontiguousarray(self.arr2, dtype=np.float64)

    @classmethod
    def from_field(cls, field, d: int) -> "PotSpec":
        """Build from a PotentialField-like object (or None for zero)."""
        if field is None:
            return cls(POT_ZERO)
        dsc = getattr(field, "descriptor", None)
        if dsc is None:
            return cls(POT_CALLABLE, fn=field.evaluate)
        form = dsc["form"]
        if form == "zero":
            return cls(POT_ZERO)
        if form == "constant":
            return cls(POT_CONSTANT, f0=float(dsc["value"]))
        if form == "cosine":
            omega = np.asarray(dsc["omega"], dtype=np.float64).reshape(-1, d)
            coeffs = np.asarray(dsc["coeffs"], dtype=np.float64)
            return cls(POT_COSINE, f0=float(dsc["offset"]), arr1=omega, arr2=coeffs)
        if form == "box":
            c = np.asarray(dsc["center"], dtype=np.float64)
            half = float(dsc["half"])
            return cls(POT_BOX, f0=float(dsc["amplitude"]), arr1=np.stack([c - half, c + half]))
        if form == "bump":
            c = np.asarray(dsc["center"], dtype=np.float64)
            half = np.full(d, float(dsc["half"]))
            return cls(POT_BUMP, f0=float(dsc["amplitude"]), arr1=np.stack([c, half]))
        raise ValueError(f"unknown potential form {form!r}")

    @property
    def needs_python(self) -> bool:
        return self.code == POT_CALLABLE


def banded_ldlt_pivots(ab: np.ndarray, breakdown_floor: float = 0.0):
    """Pivot sequence of the unpivoted LDL^T of a symmetric banded matrix.

    `ab` is lower band storage, ab[r, j] = A[j+r, j]. Returns (pivots,
    breakdown_index) with breakdown_index == -1 on success.
    """
    ab = np.ascontiguousarray(ab, dtype=np.float64)
    if HAVE_CORE:
        return _core.banded_ldlt_pivots(ab, float(breakdown_floor))
    return _fallback.banded_ldlt_pivots(ab, float(breakdown_floor))


def bridge_positions(normals: np.ndarray, t: float) -> np.ndarray:
    """Pinned-at-zero bridge displacements (B, m+1, d) from iid normals (B, m-1, d)."""
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    if HAVE_CORE:
        return _core.bridge_positions(normals, float(t))
    return _fallback.bridge_positions(normals, float(t))


def chain_block(
    normals: np.ndarray,
    t: float,
    x_node: np.ndarray,
    x0_shift: np.ndarray,
    u_spec: PotSpec,
    v_spec: PotSpec,
    box: np.ndarray | None,
):
    """Per-sample path data for one block of bridges pinned at x_node.

    Returns (a, b, inside): trapezoid integrals of the background evaluated at
    positions + x0_shift and of the perturbation at the positions themselves,
    plus the indicator that every sampled position lies in the open box
    (box is None or a (2, d) array [lo; hi]; None means no cutoff).
    """
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    x_node = np.ascontiguousarray(x_node, dtype=np.float64)
    x0_shift = np.ascontiguousarray(x0_shift, dtype=np.float64)
    box_arr = None if box is None else np.ascontiguousarray(box, dtype=np.float64)
    if HAVE_CORE and not (u_spec.needs_python or v_spec.needs_python):
        return _core.chain_block(
            normals, float(t), x_node, x0_shift,
            u_spec.code, u_spec.f0, u_spec.arr1, u_spec.arr2,
            v_spec.code, v_spec.f0, v_spec.arr1, v_spec.arr2,
            box_arr,
        )
    return _fallback.chain_block(normals, float(t), x_node, x0_shift, u_spec, v_spec, box_arr)


def band_survival_block(u: np.ndarray, r: float, dt: float) -> np.ndarray:
    """Per-path probability that a 1d bridge with skeleton u stays inside (-r, r).

    u has shape (B, m+1); the result conditions on the sampled skeleton and
    accounts for excursions between slices by the two-barrier image series.
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    if HAVE_CORE:
        return _core.band_survival_block(u, float(r), float(dt))
    return _fallback.band_survival_block(u, float(r), float(dt))
