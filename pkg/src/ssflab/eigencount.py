"""Exact eigenvalue counting for sparse symmetric operators.

Counting is done through the inertia of H - E*Id: by Sylvester's law a
symmetric factorization has as many negative (zero, positive) pivots as the
matrix has eigenvalues below (at, above) E. The workhorse is an unpivoted
banded LDL^T with breakdown-retry at a nudged energy; a dense Bunch-Kaufman
engine (scipy.linalg.ldl) and a dense-spectrum oracle cross-check it on small
instances.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _kernels
from .errors import FactorizationBreakdown, OracleCapExceeded
from .lattice import DirichletOperator, lower_band_from_sparse

ORACLE_CAP_DEFAULT = 4096
MAX_RETRIES = 3
ZERO_TOL_RELATIVE = 1e-10


@dataclass(frozen=True)
class InertiaResult:
    """Signs of the pivots of H - E*Id, classified with |pivot| <= zero_tol as zero."""

    n_neg: int
    n_zero: int
    n_pos: int
    zero_tol: float
    shift_used: float
    retries: int = 0

    @property
    def dim(self) -> int:
        return self.n_neg + self.n_zero + self.n_pos

    @property
    def count_leq(self) -> int:
        return self.n_neg + self.n_zero

    @property
    def coincident(self) -> bool:
        return self.n_zero > 0 or self.retries > 0


def _as_csr(op) -> sp.csr_matrix:
    if isinstance(op, DirichletOperator):
        return op.matrix
    return sp.csr_matrix(op)


_BAND_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _band_form(op) -> tuple[np.ndarray, int]:
    """Lower band of the (possibly RCM-reordered) matrix; cached per operator."""
    key = op if isinstance(op, DirichletOperator) else None
    if key is not None and key in _BAND_CACHE:
        return _BAND_CACHE[key]
    mat = _as_csr(op)
    ab, bw = lower_band_from_sparse(mat)
    if bw > 32 and mat.shape[0] > 64:
        perm = reverse_cuthill_mckee(mat, symmetric_mode=True)
        permuted = mat[perm][:, perm]
        ab2, bw2 = lower_band_from_sparse(permuted)
        if bw2 < bw:
            ab, bw = ab2, bw2
    if key is not None:
        _BAND_CACHE[key] = (ab, bw)
    return ab, bw


def _matrix_scale(ab: np.ndarray) -> float:
    # infinity norm from the lower band (off-diagonal rows count twice)
    s = np.abs(ab[0]).max() if ab.shape[1] else 0.0
    if ab.shape[0] > 1:
        s += 2.0 * np.abs(ab[1:]).sum(axis=0).max()
    return float(s)


def _classify(pivots: np.ndarray, zero_tol: float) -> tuple[int, int, int]:
    n_neg = int((pivots < -zero_tol).sum())
    n_zero = int((np.abs(pivots) <= zero_tol).sum())
    return n_neg, n_zero, len(pivots) - n_neg - n_zero


def _dense_block_pivots(mat: np.ndarray) -> np.ndarray:
    """Eigenvalues of the block-diagonal factor of a Bunch-Kaufman LDL^T."""
    _, d, _ = scipy.linalg.ldl(mat)
    vals = []
    n = mat.shape[0]
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            a, b, c = d[i, i], d[i + 1, i], d[i + 1, i + 1]
            disc = np.sqrt(0.25 * (a - c) ** 2 + b * b)
            mid = 0.5 * (a + c)
            vals.extend([mid - disc, mid + disc])
            i += 2
        else:
            vals.append(d[i, i])
            i += 1
    return np.asarray(vals)


def inertia(op, E: float, zero_tol: float | None = None, engine: str = "auto") -> InertiaResult:
    """Inertia of op - E*Id.

    engine: "banded" (default route; unpivoted LDL^T on the band, breakdown
    triggers a retry at E*(1 + 1e-12) + 1e-14, at most 3 times), or "dense"
    (Bunch-Kaufman on the dense matrix). "auto" means banded.
    """
    if not np.isfinite(E):
        raise ValueError("energy must be finite")
    if engine == "dense":
        mat = _as_csr(op).toarray()
        scale = float(np.abs(mat).sum(axis=1).max()) + abs(E)
        tol = ZERO_TOL_RELATIVE * scale if zero_tol is None else zero_tol
        shifted = mat - E * np.eye(mat.shape[0])
        pivots = _dense_block_pivots(shifted)
        n_neg, n_zero, n_pos = _classify(pivots, tol)
        return InertiaResult(n_neg, n_zero, n_pos, tol, E, 0)
    if engine not in ("auto", "banded"):
        raise ValueError(f"unknown engine {engine!r}")

    ab0, _ = _band_form(op)
    scale = _matrix_scale(ab0) + abs(E)
    tol = ZERO_TOL_RELATIVE * scale if zero_tol is None else zero_tol
    E_try = float(E)
    last_break = -1
    for attempt in range(MAX_RETRIES + 1):
        ab = ab0.copy()
        ab[0] -= E_try
        pivots, brk = _kernels.banded_ldlt_pivots(ab)
        if brk == -1:
            n_neg, n_zero, n_pos = _classify(pivots, tol)
            return InertiaResult(n_neg, n_zero, n_pos, tol, E_try, attempt)
        last_break = brk
        E_try = E_try * (1.0 + 1e-12) + 1e-14
    raise FactorizationBreakdown(last_break, E_try)


def count_leq(op, E: float, zero_tol: float | None = None) -> int:
    """Number of eigenvalues <= E (zero pivots count as <= E)."""
    return inertia(op, E, zero_tol=zero_tol).count_leq


def count_leq_flagged(op, E: float, zero_tol: float | None = None) -> tuple[int, bool]:
    """count_leq plus a flag marking eigenvalue coincidence at E."""
    res = inertia(op, E, zero_tol=zero_tol)
    return res.count_leq, res.coincident


def dense_spectrum(op, cap: int = ORACLE_CAP_DEFAULT) -> np.ndarray:
    """All eigenvalues, ascending, of the dense symmetric matrix (oracle path)."""
    mat = _as_csr(op)
    if mat.shape[0] > cap:
        raise OracleCapExceeded(f"dimension {mat.shape[0]} exceeds oracle cap {cap}")
    return scipy.linalg.eigvalsh(mat.toarray())


def relative_count(op1: DirichletOperator, op0: DirichletOperator, E: float) -> int:
    """N0(E) - N1(E): eigenvalues the perturbation pushed past E."""
    if op1.grid != op0.grid:
        raise ValueError("operators live on different grids")
    return count_leq(op0, E) - count_leq(op1, E)


def relative_count_flagged(
    op1: DirichletOperator, op0: DirichletOperator, E: float
) -> tuple[int, bool]:
    if op1.grid != op0.grid:
        raise ValueError("operators live on different grids")
    c0, f0 = count_leq_flagged(op0, E)
    c1, f1 = count_leq_flagged(op1, E)
    return c0 - c1, f0 or f1
