"""Symmetric-matrix kernels: scaled triangular vectorization (svec/smat),
symmetric Kronecker action, and a guarded dense factorization.

Conventions
-----------
* ``svec`` packs the lower triangle of a symmetric matrix row by row
  (positions (0,0), (1,0), (1,1), (2,0), ...), scaling off-diagonal entries
  by sqrt(2) so that ``svec(A) . svec(B) == trace(A @ B)``.
* Indices are 0-based everywhere inside the package; file formats and error
  messages convert to 1-based at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, NonTriangularLength, NotFinite

SQRT2 = float(np.sqrt(2.0))


def tri(order: int) -> int:
    """Length of the packed lower triangle of a symmetric matrix."""
    return order * (order + 1) // 2


@lru_cache(maxsize=None)
def order_of_tri(length: int) -> int:
    """Inverse of :func:`tri`; raises NonTriangularLength if not triangular."""
    order = int((np.sqrt(8 * length + 1) - 1) / 2 + 0.5)
    if tri(order) != length:
        raise NonTriangularLength(
            f"length {length} is not a triangular number o*(o+1)/2"
        )
    return order


@lru_cache(maxsize=None)
def tri_indices(order: int):
    """(rows, cols) index arrays of the packed lower triangle, row-major."""
    rows, cols = np.tril_indices(order)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


@lru_cache(maxsize=None)
def svec_scale(order: int) -> np.ndarray:
    """Per-position scale vector: 1 on the diagonal, sqrt(2) off it."""
    rows, cols = tri_indices(order)
    scale = np.where(rows == cols, 1.0, SQRT2)
    scale.setflags(write=False)
    return scale


def svec(mat: np.ndarray) -> np.ndarray:
    """Scaled packed lower triangle of a symmetric matrix."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"svec expects a square matrix, got {mat.shape}")
    order = mat.shape[0]
    rows, cols = tri_indices(order)
    return mat[rows, cols] * svec_scale(order)


def smat(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec`: rebuild the full symmetric matrix."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1:
        raise DimensionMismatch(f"smat expects a vector, got shape {vec.shape}")
    order = order_of_tri(vec.shape[0])
    rows, cols = tri_indices(order)
    vals = vec / svec_scale(order)
    out = np.zeros((order, order))
    out[rows, cols] = vals
    out[cols, rows] = vals
    return out


def svec_stack(mats: np.ndarray) -> np.ndarray:
    """Vectorized :func:`svec` over a stack of symmetric matrices (g, o, o)."""
    mats = np.asarray(mats, dtype=float)
    order = mats.shape[-1]
    rows, cols = tri_indices(order)
    return mats[..., rows, cols] * svec_scale(order)


def smat_stack(vecs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`smat` over a stack of packed vectors (g, t)."""
    vecs = np.asarray(vecs, dtype=float)
    order = order_of_tri(vecs.shape[-1])
    rows, cols = tri_indices(order)
    vals = vecs / svec_scale(order)
    out = np.zeros(vecs.shape[:-1] + (order, order))
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


def sym_kron_apply(a: np.ndarray, b: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Action of the symmetric Kronecker product without materializing it:
    ``svec(0.5 * (A @ smat(v) @ B.T + B @ smat(v) @ A.T))``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(
            f"sym_kron_apply needs two square matrices of equal order, "
            f"got {a.shape} and {b.shape}"
        )
    vec = np.asarray(vec, dtype=float)
    if vec.shape[-1] != tri(a.shape[0]):
        raise DimensionMismatch(
            f"vector length {vec.shape[-1]} does not match order {a.shape[0]}"
        )
    if vec.ndim == 1:
        mid = smat(vec)
        return svec(0.5 * (a @ mid @ b.T + b @ mid @ a.T))
    mids = smat_stack(vec)
    out = 0.5 * (
        np.einsum("ij,gjk,lk->gil", a, mids, b)
        + np.einsum("ij,gjk,lk->gil", b, mids, a)
    )
    return svec_stack(out)


def sym_kron_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Materialize the symmetric Kronecker product as a tri(o) x tri(o) matrix.

    Entry formula for packed positions p=(i,j), q=(k,l):
    s_p s_q / 4 * (A[i,k]B[j,l] + A[i,l]B[j,k] + B[i,k]A[j,l] + B[i,l]A[j,k]).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(
            f"sym_kron_matrix needs two square matrices of equal order, "
            f"got {a.shape} and {b.shape}"
        )
    order = a.shape[0]
    r, c = tri_indices(order)
    s = svec_scale(order)
    term = (
        a[np.ix_(r, r)] * b[np.ix_(c, c)]
        + a[np.ix_(r, c)] * b[np.ix_(c, r)]
        + b[np.ix_(r, r)] * a[np.ix_(c, c)]
        + b[np.ix_(r, c)] * a[np.ix_(c, r)]
    )
    return 0.25 * np.outer(s, s) * term


def sym_kron_stack(w: np.ndarray) -> np.ndarray:
    """Vectorized ``W (x)_s W`` over a stack of symmetric matrices (g, o, o).

    Returns (g, t, t) with t = tri(o).  Used to assemble the scaled diagonal
    blocks of the normal matrix for many same-order blocks at once.
    """
    w = np.asarray(w, dtype=float)
    order = w.shape[-1]
    r, c = tri_indices(order)
    s = svec_scale(order)
    term = (
        w[:, r[:, None], r[None, :]] * w[:, c[:, None], c[None, :]]
        + w[:, r[:, None], c[None, :]] * w[:, c[:, None], r[None, :]]
    )
    return 0.5 * (s[:, None] * s[None, :]) * term


# --------------------------------------------------------------------------
# Matrix containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DenseSym:
    """Dense symmetric matrix stored as its packed (unscaled) lower triangle,
    row-major."""

    order: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 1 or entries.shape[0] != tri(self.order):
            raise NonTriangularLength(
                f"expected {tri(self.order)} packed entries for order "
                f"{self.order}, got shape {entries.shape}"
            )
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_full(cls, mat: np.ndarray) -> "DenseSym":
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {mat.shape}")
        rows, cols = tri_indices(mat.shape[0])
        return cls(order=mat.shape[0], entries=mat[rows, cols].copy())

    def full(self) -> np.ndarray:
        rows, cols = tri_indices(self.order)
        out = np.zeros((self.order, self.order))
        out[rows, cols] = self.entries
        out[cols, rows] = self.entries
        return out

    def svec(self) -> np.ndarray:
        return self.entries * svec_scale(self.order)


@dataclass
class SparseSymmetric:
    """Sparse symmetric matrix as lower-triangle triplets (row >= col).

    The constructor canonicalizes: entries with row < col are transposed and
    duplicate (row, col) pairs are summed.  Explicit zeros are kept — they
    count as structural nonzeros for sparsity-pattern purposes.
    """

    order: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=float).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise DimensionMismatch("rows/cols/vals must have equal length")
        if rows.size and (
            rows.min() < 0 or cols.min() < 0
            or rows.max() >= self.order or cols.max() >= self.order
        ):
            raise DimensionMismatch(
                f"triplet index out of range for order {self.order}"
            )
        lo = np.minimum(rows, cols)
        hi = np.maximum(rows, cols)
        if rows.size:
            key = hi * self.order + lo
            uniq, inv = np.unique(key, return_inverse=True)
            summed = np.zeros(uniq.shape[0])
            np.add.at(summed, inv, vals)
            hi = (uniq // self.order).astype(np.int64)
            lo = (uniq % self.order).astype(np.int64)
            vals = summed
        self.rows = hi
        self.cols = lo
        self.vals = vals

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    @classmethod
    def from_dense(cls, mat: np.ndarray, keep_zeros: bool = False) -> "SparseSymmetric":
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {mat.shape}")
        rows, cols = tri_indices(mat.shape[0])
        vals = mat[rows, cols]
        if not keep_zeros:
            mask = vals != 0.0
            rows, cols, vals = rows[mask], cols[mask], vals[mask]
        return cls(order=mat.shape[0], rows=rows, cols=cols, vals=vals)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.order, self.order))
        out[self.rows, self.cols] = self.vals
        out[self.cols, self.rows] = self.vals
        return out

    def dot_sym(self, x: np.ndarray) -> float:
        """Inner product <A, X> = trace(A X) with a dense symmetric X."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.order, self.order):
            raise DimensionMismatch(
                f"expected a {self.order}x{self.order} matrix, got {x.shape}"
            )
        diag = self.rows == self.cols
        vals = np.where(diag, self.vals, 2.0 * self.vals)
        return float(np.sum(vals * x[self.rows, self.cols]))

    def submatrix(self, index: np.ndarray) -> np.ndarray:
        """Dense principal submatrix on the given (0-based) index list."""
        index = np.asarray(index, dtype=np.int64)
        pos = -np.ones(self.order, dtype=np.int64)
        pos[index] = np.arange(index.size)
        out = np.zeros((index.size, index.size))
        for r, c, v in zip(self.rows, self.cols, self.vals):
            pr, pc = pos[r], pos[c]
            if pr >= 0 and pc >= 0:
                out[pr, pc] = v
                out[pc, pr] = v
        return out

    def frob_norm(self) -> float:
        diag = self.rows == self.cols
        return float(np.sqrt(np.sum(np.where(diag, 1.0, 2.0) * self.vals**2)))


# --------------------------------------------------------------------------
# Guarded dense factorization
# --------------------------------------------------------------------------

PIVOT_REL_TOL = 1e-12


@dataclass
class CholeskyOrEig:
    """Factorization of a dense symmetric matrix: Cholesky when safely
    positive definite, eigendecomposition otherwise."""

    kind: str  # "chol" | "eig"
    order: int
    chol_l: np.ndarray | None = None
    eig_vals: np.ndarray | None = None
    eig_vecs: np.ndarray | None = None
    _solve_floor: float = field(default=0.0, repr=False)

    def reconstruct(self) -> np.ndarray:
        if self.kind == "chol":
            return self.chol_l @ self.chol_l.T
        return (self.eig_vecs * self.eig_vals) @ self.eig_vecs.T

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.kind == "chol":
            import scipy.linalg as sla

            y = sla.solve_triangular(self.chol_l, rhs, lower=True)
            return sla.solve_triangular(self.chol_l.T, y, lower=False)
        coeff = self.eig_vecs.T @ rhs
        vals = self.eig_vals
        safe = np.where(np.abs(vals) > self._solve_floor, vals, np.inf)
        if coeff.ndim == 1:
            coeff = coeff / safe
        else:
            coeff = coeff / safe[:, None]
        return self.eig_vecs @ coeff


def dense_factor(mat: np.ndarray) -> CholeskyOrEig:
    """Factor a dense symmetric matrix, falling back from Cholesky to an
    eigendecomposition when any pivot drops below
    ``PIVOT_REL_TOL * max(1, max diagonal)``."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise NotFinite("matrix contains non-finite entries")
    order = mat.shape[0]
    sym = 0.5 * (mat + mat.T)
    max_diag = float(np.max(np.diag(sym))) if order else 1.0
    pivot_floor = PIVOT_REL_TOL * max(1.0, max_diag)
    try:
        chol_l = np.linalg.cholesky(sym)
        if float(np.min(np.diag(chol_l)) ** 2) >= pivot_floor:
            return CholeskyOrEig(kind="chol", order=order, chol_l=chol_l)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(sym)
    floor = PIVOT_REL_TOL * max(1.0, float(np.max(np.abs(vals))) if order else 1.0)
    return CholeskyOrEig(
        kind="eig", order=order, eig_vals=vals, eig_vecs=vecs, _solve_floor=floor
    )
