"""Problem generators, SDPA sparse-format I/O, the dense reference solver,
and the end-to-end solve driver.

Generators build standard-form minimization problems; for the cut
relaxations and the theta problem the quantity of interest is the
*negated* optimal value (the solver minimizes).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .chordal import Graph, decompose, parse_graph, sparsity_graph
from .convert import (
    ConeSpec,
    ConvertedProblem,
    build_ctc,
    dualize,
    separate_with_aux,
)
from .errors import (
    BlockNotPsd,
    DimensionMismatch,
    ParseError,
    UnsupportedBlockStructure,
)
from .ipm import (
    DenseHsdeProgram,
    DualizedHsdeProgram,
    SolveResult,
    adaptive_step_solve,
    short_step_solve,
)
from .linalg import SparseSymmetric, smat, tri
from .model import SdpProblem
from .recovery import LowRankFactor, Metrics, complete_low_rank, dimacs_metrics

METHODS = ("ctc", "dctc", "dctc-aux")
STEPS = ("short", "adaptive")
ORACLE_MAX_ORDER = 50


# ---------------------------------------------------------------------------
# graph input with weights
# ---------------------------------------------------------------------------


def parse_weighted_graph(text: str):
    """Parse the edge-list format, keeping the optional third column as the
    edge weight (default 1.0; repeated edges accumulate)."""
    graph = parse_graph(text)  # validates the grammar with line numbers
    weights: dict = {}
    seen_header = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not seen_header:
            seen_header = True
            continue
        parts = line.split()
        u, v = int(parts[0]) - 1, int(parts[1]) - 1
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        w = float(parts[2]) if len(parts) == 3 else 1.0
        weights[key] = weights.get(key, 0.0) + w
    return graph, weights


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _laplacian_cost(graph: Graph, weights, scale: float) -> SparseSymmetric:
    """``scale`` times the weighted Laplacian diag(W 1) - W."""
    if weights is None:
        weights = {}
    deg = np.zeros(graph.n)
    rows, cols, vals = [], [], []
    for u, v in graph.edges:
        w = float(weights.get((u, v), 1.0))
        deg[u] += w
        deg[v] += w
        rows.append(max(u, v))
        cols.append(min(u, v))
        vals.append(-scale * w)
    rows.extend(range(graph.n))
    cols.extend(range(graph.n))
    vals.extend(scale * deg)
    return SparseSymmetric(order=graph.n, rows=rows, cols=cols, vals=vals)


def gen_maxkcut(graph: Graph, k: int, weights=None) -> SdpProblem:
    """Relaxation of MAX k-CUT: minimize -((k-1)/2k) L.X with unit
    diagonal; for k >= 3 each edge adds X[i,j] >= -1/(k-1).  The cut bound
    is the negated optimal value."""
    if k < 2:
        raise DimensionMismatch(f"k must be at least 2, got {k}")
    n = graph.n
    factor = (k - 1) / (2.0 * k)
    cost = _laplacian_cost(graph, weights, -factor)
    constraints = []
    b = []
    senses = []
    for i in range(n):
        constraints.append(
            SparseSymmetric(order=n, rows=[i], cols=[i], vals=[1.0])
        )
        b.append(1.0)
        senses.append("eq")
    if k >= 3:
        for u, v in graph.edges:
            # the single stored off-diagonal entry doubles in the inner
            # product, so the bound is 2 * (-1/(k-1))
            constraints.append(
                SparseSymmetric(
                    order=n, rows=[max(u, v)], cols=[min(u, v)], vals=[1.0]
                )
            )
            b.append(-2.0 / (k - 1))
            senses.append("ge")
    return SdpProblem(
        cost=cost, constraints=constraints, b=np.array(b), senses=senses
    )


def gen_maxcut(graph: Graph, weights=None) -> SdpProblem:
    """MAX CUT relaxation: the k = 2 cut problem without the redundant
    edge inequalities."""
    return gen_maxkcut(graph, 2, weights)


def gen_lovasz_theta(graph: Graph) -> SdpProblem:
    """Arrow-pattern theta program of order n+1: minimize
    [[I, 1], [1^T, 0]] . X with X[i,j] = 0 on edges and X[n+1,n+1] = 1.
    The graph's theta number is the negated optimal value."""
    n = graph.n
    order = n + 1
    rows = list(range(n)) + [n] * n
    cols = list(range(n)) + list(range(n))
    vals = [1.0] * n + [1.0] * n
    cost = SparseSymmetric(order=order, rows=rows, cols=cols, vals=vals)
    constraints = []
    b = []
    for u, v in graph.edges:
        constraints.append(
            SparseSymmetric(
                order=order, rows=[max(u, v)], cols=[min(u, v)], vals=[1.0]
            )
        )
        b.append(0.0)
    constraints.append(
        SparseSymmetric(order=order, rows=[n], cols=[n], vals=[1.0])
    )
    b.append(1.0)
    return SdpProblem(cost=cost, constraints=constraints, b=np.array(b))


# ---------------------------------------------------------------------------
# SDPA sparse format (subset: one PSD block, optional trailing LP block)
# ---------------------------------------------------------------------------


def _content_lines(text: str):
    """(lineno, line) pairs with blanks and comment lines removed."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in '"*':
            continue
        yield lineno, line


def _vector_tokens(line: str) -> list:
    return line.replace(",", " ").replace("{", " ").replace("}", " ").replace(
        "(", " "
    ).replace(")", " ").split()


def read_sdpa(source) -> SdpProblem:
    """Read the supported SDPA sparse subset: one PSD block, optionally
    followed by one diagonal block whose coordinates encode inequality
    senses (a coordinate used by exactly one constraint with a negative
    coefficient marks a >= row, positive marks <=)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = list(_content_lines(text))
    if len(lines) < 4:
        raise ParseError(
            f"line {lines[-1][0] if lines else 1}: "
            "file ends before the block-size and right-hand-side lines"
        )

    def intline(idx, what):
        lineno, line = lines[idx]
        toks = _vector_tokens(line)
        if len(toks) != 1:
            raise ParseError(f"line {lineno}: expected a single {what}")
        try:
            return int(toks[0])
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer {what}")

    m = intline(0, "constraint count")
    nblocks = intline(1, "block count")
    if m < 0 or nblocks <= 0:
        raise ParseError(f"line {lines[0][0]}: negative counts")

    lineno, sizes_line = lines[2]
    toks = _vector_tokens(sizes_line)
    if len(toks) != nblocks:
        raise ParseError(
            f"line {lineno}: expected {nblocks} block sizes, got {len(toks)}"
        )
    try:
        sizes = [int(t) for t in toks]
    except ValueError:
        raise ParseError(f"line {lineno}: non-integer block size")
    if any(s == 0 for s in sizes):
        raise ParseError(f"line {lineno}: zero block size")
    if nblocks > 2 or sizes[0] < 0 or (nblocks == 2 and sizes[1] > 0):
        raise UnsupportedBlockStructure(
            "supported files have one PSD block, optionally followed by "
            f"one diagonal block; got sizes {sizes}"
        )
    n = sizes[0]
    lp_size = -sizes[1] if nblocks == 2 else 0

    lineno, b_line = lines[3]
    toks = _vector_tokens(b_line)
    if len(toks) != m:
        raise ParseError(
            f"line {lineno}: expected {m} right-hand sides, got {len(toks)}"
        )
    try:
        b = np.array([float(t) for t in toks])
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric right-hand side")

    psd_entries = [dict() for _ in range(m + 1)]  # (r, c) -> value
    lp_entries = [dict() for _ in range(m + 1)]  # pos -> value
    for lineno, line in lines[4:]:
        toks = line.split()
        if len(toks) != 5:
            raise ParseError(
                f"line {lineno}: expected 'matno blkno i j value', "
                f"got {len(toks)} fields"
            )
        try:
            matno, blkno, i, j = (int(t) for t in toks[:4])
            value = float(toks[4])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric entry fields")
        if not (0 <= matno <= m):
            raise ParseError(
                f"line {lineno}: matrix number {matno} outside [0, {m}]"
            )
        if not (1 <= blkno <= nblocks):
            raise ParseError(
                f"line {lineno}: block number {blkno} outside [1, {nblocks}]"
            )
        size = n if blkno == 1 else lp_size
        if not (1 <= i <= size and 1 <= j <= size):
            raise ParseError(
                f"line {lineno}: entry ({i}, {j}) outside block of size "
                f"{size}"
            )
        if blkno == 1:
            key = (max(i, j) - 1, min(i, j) - 1)
            psd_entries[matno][key] = psd_entries[matno].get(key, 0.0) + value
        else:
            if i != j:
                raise ParseError(
                    f"line {lineno}: off-diagonal entry in a diagonal block"
                )
            lp_entries[matno][i - 1] = lp_entries[matno].get(i - 1, 0.0) + value

    senses = ["eq"] * m
    if lp_size:
        if lp_entries[0]:
            raise UnsupportedBlockStructure(
                "the objective touches the diagonal block; senses cannot "
                "be reconstructed"
            )
        touched: dict = {}
        for k in range(1, m + 1):
            if len(lp_entries[k]) > 1:
                raise UnsupportedBlockStructure(
                    f"constraint {k} touches several diagonal coordinates"
                )
            for pos, val in lp_entries[k].items():
                touched.setdefault(pos, []).append((k, val))
        for pos, users in touched.items():
            if len(users) != 1:
                raise UnsupportedBlockStructure(
                    f"diagonal coordinate {pos + 1} is shared by "
                    f"constraints {sorted(k for k, _ in users)}"
                )
            k, val = users[0]
            if val == 0.0:
                continue
            senses[k - 1] = "ge" if val < 0 else "le"

    def build(entries):
        rows = [r for r, _ in entries]
        cols = [c for _, c in entries]
        vals = [entries[k] for k in entries]
        return SparseSymmetric(order=n, rows=rows, cols=cols, vals=vals)

    cost = build(psd_entries[0])
    constraints = [build(psd_entries[k]) for k in range(1, m + 1)]
    return SdpProblem(cost=cost, constraints=constraints, b=b, senses=senses)


def write_sdpa(sdp: SdpProblem, destination) -> None:
    """Write the supported SDPA sparse subset (inverse of read_sdpa)."""
    n_ineq = sdp.n_ineq
    lines = [f"{sdp.m}", "2" if n_ineq else "1"]
    lines.append(f"{sdp.n} -{n_ineq}" if n_ineq else f"{sdp.n}")
    lines.append(" ".join(f"{v:.17g}" for v in sdp.b))

    def emit(matno, mat):
        for r, c, v in zip(mat.rows, mat.cols, mat.vals):
            # stored lower triangle (r >= c); the format wants i <= j
            lines.append(f"{matno} 1 {c + 1} {r + 1} {v:.17g}")

    emit(0, sdp.cost)
    slot = 0
    for idx, (a, sense) in enumerate(zip(sdp.constraints, sdp.senses), 1):
        emit(idx, a)
        if sense != "eq":
            slot += 1
            coef = -1.0 if sense == "ge" else 1.0
            lines.append(f"{idx} 2 {slot} {slot} {coef:.17g}")
    text = "\n".join(lines) + "\n"
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# dense reference oracle
# ---------------------------------------------------------------------------


def dense_reference_solve(sdp: SdpProblem, eps: float = 1e-8):
    """Solve the semidefinite program directly over svec(X) (plus one
    nonnegative slack per inequality row) with a dense normal matrix and no
    conversion.  Returns (X, y, S) with S the dual slack matrix.  Intended
    as a brute-force cross-check at small order.

    The default tolerance is the reliable floating-point operating point:
    problems whose optimum is rank deficient push the central path into a
    region (complementarity products near machine epsilon times the block
    scale) where tighter targets can end in ``NumericalStall`` rather than
    convergence."""
    n = sdp.n
    if n > ORACLE_MAX_ORDER:
        raise DimensionMismatch(
            f"reference solver is limited to order {ORACLE_MAX_ORDER}, "
            f"got {n}"
        )
    k = tri(n)
    n_ineq = sdp.n_ineq
    m_op = np.zeros((sdp.m, k + n_ineq))
    m_op[:, :k] = sdp.stacked_rows().toarray()
    slot = 0
    for i, sense in enumerate(sdp.senses):
        if sense == "eq":
            continue
        m_op[i, k + slot] = -1.0 if sense == "ge" else 1.0
        slot += 1
    c = np.concatenate([sdp.cost_svec(), np.zeros(n_ineq)])
    segments = [("psd", n)]
    if n_ineq:
        segments.append(("nonneg", n_ineq))
    program = DenseHsdeProgram(
        m_op, sdp.b, c, ConeSpec(segments=tuple(segments))
    )
    res = adaptive_step_solve(program, eps=eps, max_iter=200)
    st = res.state
    x_mat = smat(st.x[:k] / st.tau)
    y = st.y / st.tau
    s_mat = smat(st.s[:k] / st.tau)
    return x_mat, y, s_mat


# ---------------------------------------------------------------------------
# solve driver
# ---------------------------------------------------------------------------


@dataclass
class SolveOutcome:
    """End-to-end result of the conversion pipeline on one problem."""

    method: str
    step: str
    status: str
    objective: float
    z: np.ndarray
    y: np.ndarray  # multipliers of the original constraints
    factor: LowRankFactor
    metrics: Metrics
    omega: int
    ell: int
    iterations: int
    time_per_iter_s: float
    eps: float
    ctc: ConvertedProblem
    result: SolveResult = field(repr=False, default=None)

    def metrics_json(self) -> str:
        payload = json.loads(self.metrics.to_json())
        payload["omega"] = self.omega
        payload["ell"] = self.ell
        return json.dumps(payload)


def _project_psd(block: np.ndarray, eps: float, label: str) -> np.ndarray:
    """Project a bag submatrix of the epsilon-accurate primal estimate onto
    the cone before completion.

    An interior-point answer at tolerance ``eps`` carries an O(eps) cone
    violation in the recovered original-space variable, so eigenvalues in
    ``[-cap, 0)`` with ``cap`` proportional to ``eps`` are rounding debris
    and are clamped to zero; anything beyond that cap is a genuine failure
    and raises ``BlockNotPsd``.
    """
    vals, vecs = np.linalg.eigh(0.5 * (block + block.T))
    if vals.size == 0:
        return block
    cap = 100.0 * eps * (1.0 + float(vals[-1]))
    if vals[0] < -cap:
        raise BlockNotPsd(
            f"{label} of the solution estimate has eigenvalue "
            f"{vals[0]:.3e}, beyond the O(eps) projection cap {-cap:.3e}"
        )
    if vals[0] >= 0.0:
        return block
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def solve_sdp(
    sdp: SdpProblem,
    method: str = "dctc",
    eps: float = 1e-8,
    step: str = "adaptive",
    max_iter: int | None = None,
    order: list | None = None,
    **solver_kw,
) -> SolveOutcome:
    """Convert, solve, and recover a low-rank completion.

    method: "ctc" solves the converted block problem with a dense
    row-space normal matrix (the baseline); "dctc" dualizes it so the
    normal matrix is block-tree structured; "dctc-aux" additionally
    splits multi-bag constraints with auxiliary chain variables before
    dualizing.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if step not in STEPS:
        raise ValueError(f"step must be one of {STEPS}, got {step!r}")

    td = decompose(sparsity_graph(sdp.cost, sdp.constraints), order)
    if method == "dctc-aux":
        ctc = separate_with_aux(sdp, td)
    else:
        ctc = build_ctc(sdp, td)

    if method == "ctc":
        program = DenseHsdeProgram(
            ctc.g_matrix().toarray(), ctc.g_rhs, ctc.c_z, ctc.cone
        )
    else:
        program = DualizedHsdeProgram(dualize(ctc))

    t0 = time.perf_counter()
    if step == "short":
        res = short_step_solve(
            program, eps=eps, max_iter=max_iter or 50000, **solver_kw
        )
    else:
        res = adaptive_step_solve(
            program, eps=eps, max_iter=max_iter or 200, **solver_kw
        )
    elapsed = time.perf_counter() - t0

    st = res.state
    if method == "ctc":
        z = st.x / st.tau
        u = st.y / st.tau
    else:
        dualized = program.dualized
        z = dualized.ctc_primal(st.y, st.tau)
        u, _sigma = dualized.ctc_dual(st.x, st.tau)

    objective = float(ctc.c_z @ z)
    blocks_map = ctc.extract_bag_matrices(z)
    blocks = [
        _project_psd(blocks_map[j], eps, f"bag {j}") for j in range(td.ell)
    ]
    factor = complete_low_rank(blocks, td)
    y_sdp = u[ctc.dual_row_of_constraint]

    time_per_iter = elapsed / max(res.iterations, 1)
    metrics = dimacs_metrics(
        sdp,
        factor,
        y_sdp,
        iterations=res.iterations,
        time_per_iter_s=time_per_iter,
    )
    return SolveOutcome(
        method=method,
        step=step,
        status=res.status,
        objective=objective,
        z=z,
        y=y_sdp,
        factor=factor,
        metrics=metrics,
        omega=td.omega,
        ell=td.ell,
        iterations=res.iterations,
        time_per_iter_s=time_per_iter,
        eps=eps,
        ctc=ctc,
        result=res,
    )
