"""Block-tree normal-equation engine.

The dualized block-tree program has a normal matrix of the form

    N = H + q q^T,      H = D_block + sigma * G^T G,

where ``D_block`` is block diagonal over the per-bag coordinate blocks
(dense symmetric-Kronecker blocks on the matrix coordinates, squared
scalings on the slack coordinates, zeros on the chain coordinates) and
every row of ``G`` touches coordinates of at most two tree-adjacent
blocks.  Consequently H has nonzero off-diagonal blocks only on tree
edges, and a block Cholesky factorization that eliminates children
before parents produces no fill: eliminating a child updates only its
parent's diagonal block.

``TreeNormalSystem`` assembles H from per-iteration scaling data,
factors it bottom-up along the tree, and solves ``(H + q q^T) v = r``
for batched right-hand sides by the matrix-inversion lemma, with the
denominator ``1 + q^T H^{-1} q`` computed once per factorization and a
single iterative-refinement pass.

``DenseNormalSystem`` is the small-scale reference: it materializes the
full normal matrix ``M D^{-1} M^T`` densely and factors it directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from .chordal import TreeDecomposition
from .convert import ConvertedProblem, DualizedProblem
from .errors import (
    DenominatorUnderflow,
    DimensionMismatch,
    IndefinitePivot,
    StructureViolation,
)
from .linalg import dense_factor, sym_kron_stack, tri

REGULARIZATION_REL = 1e-12
DENOMINATOR_FLOOR = 1e-14
REFINE_REL_TOL = 1e-9


def topological_permutation(td: TreeDecomposition) -> np.ndarray:
    """Block elimination order: children precede parents.

    Deterministic depth-first postorder with the smallest child visited
    first.  Position k of the returned array holds the block eliminated
    k-th.
    """
    return np.asarray(td.postorder(), dtype=np.int64)


def plain_row_coupling(ctc: ConvertedProblem) -> set:
    """Symbolic sparsity of the row-space normal matrix ``G D^{-1} G^T``.

    Two rows couple exactly when they touch a common coordinate block
    (the block-diagonal scaling is dense within a block).  Returns the
    set of coupled unordered row pairs ``(i, j)`` with ``i < j``.
    Intended for moderate row counts; the set is materialized.
    """
    rows_by_block: dict = {}
    for r, blocks in enumerate(ctc.block_of_row):
        for j in blocks:
            rows_by_block.setdefault(j, []).append(r)
    pairs = set()
    for rows in rows_by_block.values():
        for a in range(len(rows)):
            for b in range(a + 1, len(rows)):
                pairs.add((rows[a], rows[b]))
    return pairs


@dataclass
class BlockInfo:
    start: int
    width: int
    svec_len: int
    n_aux: int
    n_nn: int
    order: int

    @property
    def nn_local(self) -> slice:
        lo = self.svec_len + self.n_aux
        return slice(lo, lo + self.n_nn)


class TreeNormalSystem:
    """Assemble, factor, and solve the block-tree normal equations."""

    def __init__(self, dualized: DualizedProblem):
        ctc = dualized.ctc
        self.dualized = dualized
        self.ctc = ctc
        td = ctc.td
        self.ell = td.ell
        self.parent = np.asarray(td.parent, dtype=np.int64)
        self.root = td.root
        self.order = topological_permutation(td)
        self.children = td.children_lists()
        self.dim = ctc.dim_z

        self.info = [
            BlockInfo(
                start=blk.svec_start,
                width=blk.width,
                svec_len=blk.svec_len,
                n_aux=blk.n_aux,
                n_nn=blk.n_nn,
                order=blk.order,
            )
            for blk in ctc.blocks
        ]
        self.slices = [slice(b.start, b.start + b.width) for b in self.info]

        self._check_row_structure()
        self._gtg_diag, self._gtg_off = self._static_gram_blocks()
        self._order_groups: dict = {}
        for j, b in enumerate(self.info):
            self._order_groups.setdefault(b.order, []).append(j)

        # per-factorization state
        self.h_diag: list = []
        self.h_off: list = []  # keyed by child block index (None for root)
        self.l_diag: list = []
        self.l_off: list = []
        self.sigma = 0.0
        self.q = None
        self._u_q = None
        self._denom = None

        # instrumentation
        self.n_assemble = 0
        self.n_factor = 0
        self.n_solve_columns = 0
        self.n_refine = 0
        self.last_assemble_ops = 0
        self.last_factor_ops = 0
        self._peak_bytes = 0

    # ------------------------------------------------------------------
    # static structure
    # ------------------------------------------------------------------
    def _check_row_structure(self) -> None:
        for r, blocks in enumerate(self.ctc.block_of_row):
            if len(blocks) > 2:
                raise StructureViolation(
                    f"row {r} touches blocks {blocks}; a tree-structured "
                    "normal matrix needs at most two tree-adjacent blocks "
                    "per row"
                )
            if len(blocks) == 2:
                a, b = blocks
                if self.parent[a] != b and self.parent[b] != a:
                    raise StructureViolation(
                        f"row {r} touches blocks {a} and {b}, which are not "
                        "adjacent in the block tree"
                    )

    def _static_gram_blocks(self):
        """Dense sub-blocks of G^T G on the diagonal and on tree edges."""
        g = self.dualized.g_csr
        gtg = (g.T @ g).tocoo()
        starts = np.array([b.start for b in self.info], dtype=np.int64)
        widths = np.array([b.width for b in self.info], dtype=np.int64)
        block_of_coord = np.repeat(np.arange(self.ell, dtype=np.int64), widths)
        if block_of_coord.size != self.dim:
            raise DimensionMismatch(
                "block layout does not tile the coordinate space"
            )

        diag = [np.zeros((b.width, b.width)) for b in self.info]
        off = [None] * self.ell
        for j in range(self.ell):
            p = int(self.parent[j])
            if p != j:
                off[j] = np.zeros((self.info[p].width, self.info[j].width))

        br = block_of_coord[gtg.row]
        bc = block_of_coord[gtg.col]
        lr = gtg.row - starts[br]
        lc = gtg.col - starts[bc]
        for k in range(gtg.nnz):
            a, b = int(br[k]), int(bc[k])
            if a == b:
                diag[a][lr[k], lc[k]] += gtg.data[k]
            elif self.parent[b] == a:
                off[b][lr[k], lc[k]] += gtg.data[k]
            elif self.parent[a] == b:
                continue  # symmetric counterpart, stored once
            else:  # pragma: no cover - excluded by the row check
                raise StructureViolation(
                    f"G^T G has an entry coupling non-adjacent blocks "
                    f"{a} and {b}"
                )
        return diag, off

    # ------------------------------------------------------------------
    # per-iteration assembly and factorization
    # ------------------------------------------------------------------
    def assemble_h(self, sigma: float, psd_w: list, nn_w2: list) -> None:
        """Build H = D_block + sigma * G^T G from the scaling data.

        ``psd_w[j]`` is the dense scaling matrix of block j's matrix
        variable; ``nn_w2[j]`` the squared scalings of its slack
        coordinates (empty array if none).  Chain coordinates carry no
        block-diagonal term.
        """
        if len(psd_w) != self.ell or len(nn_w2) != self.ell:
            raise DimensionMismatch("scaling data must list every block")
        ops = 0
        h_diag = []
        for j, b in enumerate(self.info):
            blk = sigma * self._gtg_diag[j]
            ops += b.width * b.width
            h_diag.append(blk)
        for o, idxs in self._order_groups.items():
            stack = np.stack([psd_w[j] for j in idxs])
            if stack.shape[1:] != (o, o):
                raise DimensionMismatch(
                    f"scaling matrices for order-{o} blocks have shape "
                    f"{stack.shape[1:]}"
                )
            kron = sym_kron_stack(stack)
            t = tri(o)
            ops += len(idxs) * t * t * o
            for pos, j in enumerate(idxs):
                h_diag[j][:t, :t] += kron[pos]
        for j, b in enumerate(self.info):
            if b.n_nn:
                w2 = np.asarray(nn_w2[j], dtype=float)
                if w2.shape != (b.n_nn,):
                    raise DimensionMismatch(
                        f"block {j} expects {b.n_nn} slack scalings"
                    )
                sub = h_diag[j][b.nn_local, b.nn_local]
                sub[np.diag_indices(b.n_nn)] += w2
        self.h_diag = h_diag
        self.h_off = [
            None if blk is None else sigma * blk for blk in self._gtg_off
        ]
        self.sigma = float(sigma)
        self.n_assemble += 1
        self.last_assemble_ops = ops
        self._note_bytes()

    def factor(self) -> None:
        """Block Cholesky along the tree, children eliminated first.

        Eliminating a child updates only its parent's diagonal block, so
        the factor's off-diagonal block pattern equals the lower block
        pattern of H itself (no fill).  A static shift of
        ``1e-12 * (1 + max diagonal)`` is applied before pivoting.
        """
        if not self.h_diag:
            raise StructureViolation("assemble_h must run before factor")
        max_diag = max(
            (float(np.max(np.diag(blk))) if blk.size else 0.0)
            for blk in self.h_diag
        )
        reg = REGULARIZATION_REL * (1.0 + max(max_diag, 0.0))
        work = [blk.copy() for blk in self.h_diag]
        for j, blk in enumerate(work):
            blk[np.diag_indices(self.info[j].width)] += reg
        l_diag = [None] * self.ell
        l_off = [None] * self.ell
        ops = 0
        for j in self.order:
            j = int(j)
            try:
                lj = np.linalg.cholesky(work[j])
            except np.linalg.LinAlgError as exc:
                raise IndefinitePivot(
                    f"diagonal block {j} (bag {self.ctc.blocks[j].bag}) is "
                    "not positive definite"
                ) from exc
            l_diag[j] = lj
            w = self.info[j].width
            ops += w ** 3 // 3 + w
            p = int(self.parent[j])
            if p != j:
                hpj = self.h_off[j]
                r = solve_triangular(lj, hpj.T, lower=True).T
                l_off[j] = r
                work[p] -= r @ r.T
                wp = self.info[p].width
                ops += w * w * wp + w * wp * wp
        self.l_diag = l_diag
        self.l_off = l_off
        self.n_factor += 1
        self.last_factor_ops = ops
        self._note_bytes()

    def set_rank1(self, q) -> None:
        """Install the rank-1 term and precompute its solve and denominator."""
        if q is None:
            self.q = None
            self._u_q = None
            self._denom = None
            return
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise DimensionMismatch(
                f"rank-1 vector has shape {q.shape}, expected ({self.dim},)"
            )
        u_q = self.solve_h(q)
        denom = 1.0 + float(q @ u_q)
        if denom <= DENOMINATOR_FLOOR:
            raise DenominatorUnderflow(
                f"1 + q^T H^-1 q = {denom:.3e} is below "
                f"{DENOMINATOR_FLOOR:.0e}"
            )
        self.q = q
        self._u_q = u_q
        self._denom = denom
        self._note_bytes()

    def update(self, sigma: float, q, psd_w: list, nn_w2: list) -> None:
        """Assemble, factor, and install the rank-1 term in one call."""
        self.assemble_h(sigma, psd_w, nn_w2)
        self.factor()
        self.set_rank1(q)

    # ------------------------------------------------------------------
    # solves
    # ------------------------------------------------------------------
    def _as_columns(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        cols = rhs.reshape(self.dim, -1).copy() if single else rhs.copy()
        if cols.shape[0] != self.dim:
            raise DimensionMismatch(
                f"right-hand side has {cols.shape[0]} rows, expected "
                f"{self.dim}"
            )
        return cols, single

    def solve_h(self, rhs):
        """H^{-1} rhs via the block factor (batched columns supported)."""
        if not self.l_diag:
            raise StructureViolation("factor must run before solve")
        x, single = self._as_columns(rhs)
        self.n_solve_columns += x.shape[1]
        for j in self.order:
            j = int(j)
            sl = self.slices[j]
            yj = solve_triangular(self.l_diag[j], x[sl], lower=True)
            x[sl] = yj
            p = int(self.parent[j])
            if p != j:
                x[self.slices[p]] -= self.l_off[j] @ yj
        for j in self.order[::-1]:
            j = int(j)
            sl = self.slices[j]
            t = x[sl]
            p = int(self.parent[j])
            if p != j:
                t = t - self.l_off[j].T @ x[self.slices[p]]
            x[sl] = solve_triangular(self.l_diag[j], t, lower=True, trans="T")
        return x[:, 0] if single else x

    def _rank1_correct(self, u):
        if self.q is None:
            return u
        coef = (self.q @ u) / self._denom
        return u - self._u_q[:, None] * coef

    def solve_with_rank1(self, rhs):
        """(H + q q^T)^{-1} rhs with one refinement pass if needed.

        The denominator 1 + q^T H^{-1} q from :meth:`set_rank1` is reused
        across all right-hand sides of a batch.
        """
        cols, single = self._as_columns(rhs)
        x = self._rank1_correct(self.solve_h(cols))
        resid = cols - self.apply_normal(x)
        need = np.linalg.norm(resid, axis=0) > REFINE_REL_TOL * (
            1.0 + np.linalg.norm(cols, axis=0)
        )
        if bool(np.any(need)):
            self.n_refine += 1
            x = x + self._rank1_correct(self.solve_h(resid))
        return x[:, 0] if single else x

    # ------------------------------------------------------------------
    # operator applications and diagnostics
    # ------------------------------------------------------------------
    def apply_h(self, x):
        """H x using the assembled (unregularized) blocks."""
        v, single = self._as_columns(x)
        out = np.zeros_like(v)
        for j in range(self.ell):
            sl = self.slices[j]
            out[sl] += self.h_diag[j] @ v[sl]
            p = int(self.parent[j])
            if p != j:
                slp = self.slices[p]
                out[slp] += self.h_off[j] @ v[sl]
                out[sl] += self.h_off[j].T @ v[slp]
        return out[:, 0] if single else out

    def apply_normal(self, x):
        out = self.apply_h(x)
        if self.q is not None:
            v = np.asarray(x, dtype=float)
            if out.ndim == 1:
                out = out + self.q * float(self.q @ v)
            else:
                out = out + self.q[:, None] * (self.q @ v)
        return out

    def h_dense(self) -> np.ndarray:
        """Assembled H as a dense matrix (small instances, tests)."""
        h = np.zeros((self.dim, self.dim))
        for j in range(self.ell):
            sl = self.slices[j]
            h[sl, sl] = self.h_diag[j]
            p = int(self.parent[j])
            if p != j:
                h[self.slices[p], sl] = self.h_off[j]
                h[sl, self.slices[p]] = self.h_off[j].T
        return h

    def reconstruct_dense(self) -> np.ndarray:
        """L L^T as a dense matrix (small instances, tests)."""
        n = self.dim
        lfull = np.zeros((n, n))
        offsets = np.zeros(self.ell, dtype=np.int64)
        acc = 0
        for j in self.order:
            offsets[int(j)] = acc
            acc += self.info[int(j)].width
        perm = np.concatenate(
            [
                np.arange(
                    self.info[int(j)].start,
                    self.info[int(j)].start + self.info[int(j)].width,
                )
                for j in self.order
            ]
        )
        for j in range(self.ell):
            o = offsets[j]
            w = self.info[j].width
            lfull[o:o + w, o:o + w] = self.l_diag[j]
            p = int(self.parent[j])
            if p != j:
                op = offsets[p]
                wp = self.info[p].width
                lfull[op:op + wp, o:o + w] = self.l_off[j]
        rec = lfull @ lfull.T
        out = np.zeros((n, n))
        out[np.ix_(perm, perm)] = rec
        return out

    def offdiag_block_counts(self):
        """(nonzero off-diagonal blocks of H, of L) — equal when no fill."""
        in_h = sum(
            1
            for blk in self.h_off
            if blk is not None and bool(np.any(blk != 0.0))
        )
        in_l = sum(
            1
            for blk in self.l_off
            if blk is not None and bool(np.any(blk != 0.0))
        )
        return in_h, in_l

    def pattern_stats(self) -> dict:
        in_h, in_l = self.offdiag_block_counts()
        return {
            "blocks": self.ell,
            "offdiag_blocks": in_h,
            "factor_offdiag_blocks": in_l,
            "fill_blocks": in_l - in_h,
            "flops_estimate": int(
                self.last_assemble_ops + self.last_factor_ops
            ),
            "bytes": self.memory_bytes(),
        }

    def _note_bytes(self) -> None:
        total = 0
        for group in (
            self._gtg_diag,
            self._gtg_off,
            self.h_diag,
            self.h_off,
            self.l_diag,
            self.l_off,
        ):
            for blk in group:
                if blk is not None:
                    total += blk.nbytes
        for vec in (self.q, self._u_q):
            if vec is not None:
                total += vec.nbytes
        self._peak_bytes = max(self._peak_bytes, total)

    def memory_bytes(self) -> int:
        """Peak bytes held in block storage (allocation counter)."""
        self._note_bytes()
        return self._peak_bytes


class DenseNormalSystem:
    """Reference solver: materializes N = M D^{-1} M^T densely."""

    def __init__(self, m_dense: np.ndarray):
        self.m = np.asarray(m_dense, dtype=float)
        self.dim = self.m.shape[0]
        self._factor = None
        self.n_factor = 0
        self.n_solve_columns = 0

    def update(self, d_inv_apply) -> None:
        """Rebuild and factor N given a D^{-1} column operator."""
        n = self.m @ d_inv_apply(self.m.T)
        n = 0.5 * (n + n.T)
        self._factor = dense_factor(n)
        self.n_factor += 1

    def solve(self, rhs):
        if self._factor is None:
            raise StructureViolation("update must run before solve")
        rhs = np.asarray(rhs, dtype=float)
        self.n_solve_columns += 1 if rhs.ndim == 1 else rhs.shape[1]
        return self._factor.solve(rhs)

    def memory_bytes(self) -> int:
        return int(self.m.nbytes * 2)
