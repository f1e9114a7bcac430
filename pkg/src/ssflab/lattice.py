"""Grids, potentials, Dirichlet operators, and allowed-shift enumeration.

Everything here is geometry and assembly: uniform interior grids on the open
box of edge length L, bounded potentials given by closed-form evaluators, the
second-order finite-difference discretization of -(1/2)*Laplacian + U + V with
Dirichlet boundary conditions, and the lattice of perturbation shifts that keep
a security distance from the boundary.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

BACKGROUND = "periodic-background"
PERTURBATION = "compact-perturbation"

_FACE_ATOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of interior points of the box ]-L/2, L/2[^d with mesh h."""

    d: int
    L: float
    h: float
    n_per_axis: int

    @property
    def n_points(self) -> int:
        return self.n_per_axis**self.d

    def axis_coords(self) -> np.ndarray:
        i = np.arange(1, self.n_per_axis + 1, dtype=np.float64)
        return -0.5 * self.L + i * self.h

    def points(self) -> np.ndarray:
        """All interior points, shape (n_points, d), last axis fastest."""
        axes = np.meshgrid(*([self.axis_coords()] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)


def build_grid(d: int, L: float, h: float) -> GridSpec:
    """Interior Dirichlet grid with n = round(L/h) - 1 points per axis."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if not (L > 0 and h > 0 and h < L / 2):
        raise ValueError(f"need L > 0 and 0 < h < L/2, got L={L}, h={h}")
    n = int(round(L / h)) - 1
    if n < 1:
        raise ValueError(f"box too small for the mesh: L={L}, h={h} leaves no interior point")
    return GridSpec(d=d, L=float(L), h=float(h), n_per_axis=n)


@dataclass(frozen=True)
class Box:
    """Axis-aligned cube of edge length `edge` centered at `center`."""

    center: tuple[float, ...]
    edge: float

    @property
    def d(self) -> int:
        return len(self.center)

    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * self.edge

    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * self.edge

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return ((pts > self.lo()) & (pts < self.hi())).all(axis=-1)


@dataclass(frozen=True)
class PotentialField:
    """Bounded potential given by a closed-form evaluator.

    `descriptor` carries the structured form (used by the compiled kernels and
    for tagging); free-form fields set it to None and supply `evaluator`.
    Backgrounds carry a period vector, perturbations a cubic support box
    Lambda_ell(shift).
    """

    kind: str
    bound: float
    period: tuple[float, ...] | None = None
    support_half_width: float | None = None
    shift: tuple[float, ...] | None = None
    descriptor: dict | None = None
    evaluator: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in (BACKGROUND, PERTURBATION):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == PERTURBATION and self.support_half_width is None:
            raise ValueError("perturbations must declare a support half width")

    @property
    def ell(self) -> float:
        if self.support_half_width is None:
            raise ValueError("background fields have no support edge")
        return 2.0 * self.support_half_width

    def support_box(self) -> Box:
        return Box(center=self.shift, edge=self.ell)

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized evaluation; pts has shape (N, d), result (N,)."""
        pts = np.asarray(pts, dtype=np.float64)
        form = None if self.descriptor is None else self.descriptor["form"]
        if form == "zero":
            return np.zeros(pts.shape[0])
        if form == "constant":
            return np.full(pts.shape[0], self.descriptor["value"])
        if form == "cosine":
            dsc = self.descriptor
            omega = np.asarray(dsc["omega"])  # (K, d)
            coeffs = np.asarray(dsc["coeffs"])  # (K,)
            ang = pts[:, None, :] * omega[None, :, :]
            return dsc["offset"] + np.cos(ang).prod(axis=2) @ coeffs
        if form == "box":
            dsc = self.descriptor
            u = np.abs(pts - np.asarray(dsc["center"]))
            half = dsc["half"]
            atol = _FACE_ATOL * max(1.0, half)
            w = np.where(u < half - atol, 1.0, np.where(u <= half + atol, 0.5, 0.0))
            return dsc["amplitude"] * w.prod(axis=1)
        if form == "bump":
            dsc = self.descriptor
            v = (pts - np.asarray(dsc["center"])) / dsc["half"]
            inside = np.abs(v) < 1.0
            w = np.zeros_like(v)
            vi = v[inside]
            w[inside] = np.exp(1.0 - 1.0 / (1.0 - vi * vi))
            return dsc["amplitude"] * w.prod(axis=1)
        return np.asarray(self.evaluator(pts), dtype=np.float64)

    def __call__(self, x) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return float(self.evaluate(x)[0])

    def tag(self) -> str:
        if self.descriptor is None:
            return f"{self.kind}:custom"
        items = ",".join(
            f"{k}={v}" for k, v in sorted(self.descriptor.items()) if k != "omega"
        )
        return f"{self.kind}:{items}"


def zero_background() -> PotentialField:
    return PotentialField(kind=BACKGROUND, bound=0.0, descriptor={"form": "zero"})


def constant_background(value: float, period: Sequence[float] | None = None) -> PotentialField:
    return PotentialField(
        kind=BACKGROUND,
        bound=abs(value),
        period=None if period is None else tuple(float(p) for p in period),
        descriptor={"form": "constant", "value": float(value)},
    )


def cosine_background(
    period: Sequence[float],
    terms: Sequence[tuple[float, Sequence[int]]],
    offset: float = 0.0,
) -> PotentialField:
    """offset + sum_k c_k * prod_j cos(2 pi k_j x_j / p_j); periodic with period p."""
    period = tuple(float(p) for p in period)
    if any(p <= 0 for p in period):
        raise ValueError("period entries must be positive")
    coeffs = np.array([float(c) for c, _ in terms])
    kvecs = np.array([[int(k) for k in ks] for _, ks in terms], dtype=np.int64)
    if kvecs.ndim != 2 or kvecs.shape[1] != len(period):
        raise ValueError("each term needs one integer frequency per axis")
    omega = 2.0 * math.pi * kvecs / np.asarray(period)
    bound = abs(offset) + float(np.abs(coeffs).sum())
    return PotentialField(
        kind=BACKGROUND,
        bound=bound,
        period=period,
        descriptor={
            "form": "cosine",
            "offset": float(offset),
            "coeffs": tuple(coeffs.tolist()),
            "kvecs": tuple(map(tuple, kvecs.tolist())),
            "omega": tuple(map(tuple, omega.tolist())),
        },
    )


def box_perturbation(
    amplitude: float, ell: float, d: int, shift: Sequence[float] | None = None
) -> PotentialField:
    """amplitude on the open cube Lambda_ell(shift), half weight on its faces.

    The face value makes grid sampling a midpoint rule when faces align with
    grid points; it is irrelevant (measure zero) in the continuum.
    """
    if ell <= 0:
        raise ValueError("support edge ell must be positive")
    shift = (0.0,) * d if shift is None else tuple(float(s) for s in shift)
    if len(shift) != d:
        raise ValueError("shift must have one entry per axis")
    return PotentialField(
        kind=PERTURBATION,
        bound=abs(amplitude),
        support_half_width=0.5 * ell,
        shift=shift,
        descriptor={"form": "box", "amplitude": float(amplitude), "half": 0.5 * ell, "center": shift},
    )


def bump_perturbation(
    amplitude: float, ell: float, d: int, shift: Sequence[float] | None = None
) -> PotentialField:
    """Smooth bump amplitude * prod_j exp(1 - 1/(1-v_j^2)), supported on Lambda_ell(shift)."""
    if ell <= 0:
        raise ValueError("support edge ell must be positive")
    shift = (0.0,) * d if shift is None else tuple(float(s) for s in shift)
    return PotentialField(
        kind=PERTURBATION,
        bound=abs(amplitude),
        support_half_width=0.5 * ell,
        shift=shift,
        descriptor={"form": "bump", "amplitude": float(amplitude), "half": 0.5 * ell, "center": shift},
    )


def custom_perturbation(
    evaluator: Callable[[np.ndarray], np.ndarray],
    ell: float,
    bound: float,
    d: int,
    shift: Sequence[float] | None = None,
) -> PotentialField:
    shift = (0.0,) * d if shift is None else tuple(float(s) for s in shift)
    return PotentialField(
        kind=PERTURBATION,
        bound=float(bound),
        support_half_width=0.5 * ell,
        shift=shift,
        evaluator=evaluator,
    )


def shift_potential(V: PotentialField, y: Sequence[float]) -> PotentialField:
    """Translate a compactly supported perturbation: result(x) = V(x - y)."""
    if V.kind != PERTURBATION:
        raise ValueError("only compact perturbations can be shifted")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (len(V.shift),):
        raise ValueError("shift vector dimension mismatch")
    new_shift = tuple(float(s) for s in (np.asarray(V.shift) + y))
    descriptor = None
    evaluator = None
    if V.descriptor is not None:
        descriptor = dict(V.descriptor)
        descriptor["center"] = new_shift
    else:
        old_eval = V.evaluator
        offset = y.copy()
        evaluator = lambda pts, _e=old_eval, _o=offset: _e(pts - _o)  # noqa: E731
    return PotentialField(
        kind=PERTURBATION,
        bound=V.bound,
        support_half_width=V.support_half_width,
        shift=new_shift,
        descriptor=descriptor,
        evaluator=evaluator,
    )


@dataclass(frozen=True, eq=False)
class DirichletOperator:
    """Sparse symmetric finite-difference operator -(1/2)*Delta + U + V on a grid."""

    grid: GridSpec
    matrix: sp.csr_matrix
    potential_tag: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def band_lower(self) -> tuple[np.ndarray, int]:
        """Lower band storage ab[r, j] = A[j + r, j] and the bandwidth."""
        return lower_band_from_sparse(self.matrix)


def lower_band_from_sparse(mat: sp.spmatrix) -> tuple[np.ndarray, int]:
    coo = sp.coo_matrix(mat)
    rows, cols, vals = coo.row, coo.col, coo.data
    keep = rows >= cols
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    bw = int((rows - cols).max()) if len(rows) else 0
    ab = np.zeros((bw + 1, mat.shape[0]))
    ab[rows - cols, cols] = vals
    return ab, bw


def assemble_operator(
    grid: GridSpec,
    U: PotentialField | None = None,
    V: PotentialField | None = None,
) -> DirichletOperator:
    """Assemble the Dirichlet finite-difference matrix on the grid.

    Diagonal entries are d/h^2 + U(x) + V(x); axis neighbors couple with
    -1/(2 h^2); couplings across the boundary are dropped (implicit zeros).
    """
    n, d, h = grid.n_per_axis, grid.d, grid.h
    off = 1.0 / (2.0 * h * h)
    one_axis = sp.diags(
        [np.full(n - 1, -off), np.full(n, 2.0 * off), np.full(n - 1, -off)],
        offsets=(-1, 0, 1),
        format="csr",
    )
    eye = sp.identity(n, format="csr")
    terms = []
    for axis in range(d):
        mats = [eye] * d
        mats[axis] = one_axis
        terms.append(reduce(lambda a, b: sp.kron(a, b, format="csr"), mats))
    H = reduce(lambda a, b: a + b, terms)

    pot = np.zeros(grid.n_points)
    for field in (U, V):
        if field is not None:
            pot = pot + field.evaluate(grid.points())
    if not np.all(np.isfinite(pot)):
        raise ValueError("potential evaluates to non-finite values on the grid")
    if np.any(pot):
        H = H + sp.diags(pot)

    tag = "|".join(f.tag() if f is not None else "none" for f in (U, V))
    return DirichletOperator(grid=grid, matrix=sp.csr_matrix(H), potential_tag=tag)


@dataclass(frozen=True, eq=False)
class ShiftSet:
    """Allowed shift vectors x0 + p*k whose ell-box keeps distance > D(L) from the boundary."""

    x0: tuple[float, ...]
    shifts: np.ndarray  # (M, d)
    L: float
    D_of_L: float

    def __len__(self) -> int:
        return self.shifts.shape[0]

    def contains(self, y: Sequence[float], tol: float = 1e-9) -> bool:
        y = np.asarray(y, dtype=np.float64)
        if len(self) == 0:
            return False
        return bool(np.any(np.all(np.abs(self.shifts - y) <= tol, axis=1)))


def allowed_shifts(
    x0: Sequence[float],
    L: float,
    p: Sequence[float],
    ell: float,
    D: Callable[[float], float],
) -> ShiftSet:
    """Enumerate the lattice translates of x0 admissible in the box of size L.

    A shift y = x0 + p*k (k integer) is allowed when the cube Lambda_ell(y)
    keeps distance strictly greater than D(L) from the complement of the box,
    i.e. max_j |y_j| < L/2 - ell/2 - D(L). Enumeration is lexicographic in k.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if x0.shape != p.shape or x0.ndim != 1:
        raise ValueError("x0 and p must be vectors of the same dimension")
    if np.any(p <= 0):
        raise ValueError("period entries must be positive")
    if np.any(x0 < 0) or np.any(x0 >= p):
        raise ValueError("x0 must lie in the periodicity cell [0, p)")
    if ell <= 0:
        raise ValueError("ell must be positive")
    DL = float(D(L))
    if not np.isfinite(DL) or DL < 0 or DL > (L - ell) / 2:
        raise ValueError(f"invalid security distance D(L)={DL!r} for L={L}, ell={ell}")

    margin = 0.5 * L - 0.5 * ell - DL
    ranges = []
    for j in range(len(p)):
        k_lo = math.ceil((-margin - x0[j]) / p[j])
        k_hi = math.floor((margin - x0[j]) / p[j])
        ranges.append(range(k_lo, k_hi + 1))
    shifts = []
    for k in itertools.product(*ranges):
        y = x0 + p * np.asarray(k, dtype=np.float64)
        if np.max(np.abs(y)) < margin:
            shifts.append(y)
    arr = np.array(shifts) if shifts else np.zeros((0, len(p)))
    return ShiftSet(x0=tuple(x0.tolist()), shifts=arr, L=float(L), D_of_L=DL)


def log_half_security(ell: float) -> Callable[[float], float]:
    """Security distance D(L) = (1/2) log(L - ell + 1)."""

    def D(L: float) -> float:
        return 0.5 * math.log(L - ell + 1.0)

    return D
