"""Shared instance generators for the test suite."""

import numpy as np

from treesdp.chordal import Graph, decompose, sparsity_graph
from treesdp.linalg import SparseSymmetric, svec
from treesdp.model import SdpProblem


def random_connected_graph(rng, n, extra_edge_prob=0.25):
    """Random tree plus extra edges (connected, sparse-ish)."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra_edge_prob / n:
                edges.append((i, j))
    return Graph(n, edges)


def random_bag_supported_matrix(rng, n, bag, density=0.8):
    """Random symmetric matrix supported inside one bag."""
    rows, cols, vals = [], [], []
    for ai, u in enumerate(bag):
        for v in bag[: ai + 1]:
            if rng.random() < density:
                rows.append(max(u, v))
                cols.append(min(u, v))
                vals.append(float(rng.standard_normal()))
    if not rows:  # guarantee at least one entry
        u = bag[int(rng.integers(0, len(bag)))]
        rows, cols, vals = [u], [u], [1.0]
    return SparseSymmetric(order=n, rows=rows, cols=cols, vals=vals)


def random_partially_separable_problem(rng, n, m, ineq_prob=0.0):
    """Random SDP with primal and dual strict feasibility:

    * a random connected graph fixes the aggregate pattern,
    * each constraint matrix is supported inside a single bag,
    * b is evaluated on a strictly feasible X0 (so Slater holds),
    * C = I + sum(y0_i A_i) guarantees a strictly feasible dual point.
    """
    graph = random_connected_graph(rng, n)
    td = decompose(graph)
    constraints = []
    senses = []
    for _ in range(m):
        bag = td.bags[int(rng.integers(0, td.ell))]
        constraints.append(random_bag_supported_matrix(rng, n, bag))
        senses.append("eq" if rng.random() >= ineq_prob else
                      ("ge" if rng.random() < 0.5 else "le"))
    # strictly feasible primal point with the aggregate pattern
    x0 = np.eye(n)
    for j in range(td.ell):
        bag = np.asarray(td.bags[j])
        q = rng.standard_normal((len(bag), len(bag))) * 0.2
        x0[np.ix_(bag, bag)] += q @ q.T
    b = np.array([a.dot_sym(x0) for a in constraints])
    # margin for inequalities so X0 stays strictly feasible
    for i, s in enumerate(senses):
        if s == "ge":
            b[i] -= abs(rng.standard_normal()) + 0.1
        elif s == "le":
            b[i] += abs(rng.standard_normal()) + 0.1
    y0 = rng.standard_normal(m) * 0.3
    for i, s in enumerate(senses):
        if s == "ge":
            y0[i] = abs(y0[i])  # dual sign for >= rows
        elif s == "le":
            y0[i] = -abs(y0[i])
    cost_dense = np.eye(n)
    for i, a in enumerate(constraints):
        cost_dense += y0[i] * a.to_dense()
    # keep only entries inside the aggregate pattern (guaranteed by support)
    cost = SparseSymmetric.from_dense(cost_dense)
    problem = SdpProblem(cost=cost, constraints=constraints, b=b, senses=senses)
    return problem, td


def consistent_block_vector(rng, ctc, x_dense=None):
    """A z-vector whose blocks are the bag submatrices of one global X
    (slacks and aux coordinates zero).  Satisfies all overlap rows exactly."""
    n = ctc.problem.n
    if x_dense is None:
        x_dense = rng.standard_normal((n, n))
        x_dense = 0.5 * (x_dense + x_dense.T)
    z = np.zeros(ctc.dim_z)
    for j, blk in enumerate(ctc.blocks):
        bag = np.asarray(blk.bag)
        z[blk.svec_start:blk.svec_start + blk.svec_len] = svec(
            x_dense[np.ix_(bag, bag)]
        )
    return z, x_dense


def star_arrow_problem(n):
    """Arrow-pattern instance: min tr(X) s.t. X[i, n] = b_i for i < n.

    The aggregate graph is the star with hub n (0-based); both primal and
    dual Slater points exist for small b."""
    cost = SparseSymmetric(
        order=n + 1,
        rows=np.arange(n + 1),
        cols=np.arange(n + 1),
        vals=np.ones(n + 1),
    )
    constraints = [
        SparseSymmetric(order=n + 1, rows=[n], cols=[i], vals=[1.0])
        for i in range(n)
    ]
    b = np.array([0.5 / (i + 1) for i in range(n)])
    return SdpProblem(cost=cost, constraints=constraints, b=b)


def random_scaling_data(rng, ctc, sigma_range=(0.2, 2.0)):
    """Random interior scaling data for a converted problem's blocks."""
    psd_w = []
    nn_w2 = []
    for blk in ctc.blocks:
        o = blk.order
        q = rng.standard_normal((o, o))
        psd_w.append(q @ q.T + o * np.eye(o))
        nn_w2.append(np.abs(rng.standard_normal(blk.n_nn)) + 0.5)
    sigma = float(rng.uniform(*sigma_range))
    q_vec = rng.standard_normal(ctc.dim_z)
    return sigma, q_vec, psd_w, nn_w2


def dense_h_oracle(ctc, sigma, psd_w, nn_w2):
    """Independent dense construction of H = D_block + sigma * G^T G."""
    from treesdp.linalg import sym_kron_matrix

    dim = ctc.dim_z
    d_block = np.zeros((dim, dim))
    for j, blk in enumerate(ctc.blocks):
        s0 = blk.svec_start
        t = blk.svec_len
        d_block[s0:s0 + t, s0:s0 + t] = sym_kron_matrix(psd_w[j], psd_w[j])
        for k in range(blk.n_nn):
            c = blk.nn_start + k
            d_block[c, c] = nn_w2[j][k]
    g = ctc.g_matrix().toarray()
    return d_block + sigma * (g.T @ g)


def path_rayleigh_problem(n_plus_1, seed=0):
    """Tridiagonal Rayleigh-quotient instance on a path:

    min C.X subject to A.X = 1, X PSD, with A, C symmetric tridiagonal
    and A positive definite (diagonally dominant).  The sparsity graph is
    the path on ``n_plus_1`` vertices, and the single constraint spans
    every bag of its decomposition, which is the worst case for the
    row-space normal matrix and the motivating case for auxiliary
    chain variables."""
    rng = np.random.default_rng(seed)
    n1 = n_plus_1
    off_a = rng.uniform(-0.4, 0.4, n1 - 1)
    diag_a = 1.0 + np.abs(rng.standard_normal(n1)) * 0.5
    diag_a[:-1] += np.abs(off_a)
    diag_a[1:] += np.abs(off_a)  # strict diagonal dominance => A > 0
    off_c = rng.standard_normal(n1 - 1)
    diag_c = rng.standard_normal(n1)

    def tridiag(diag, off):
        rows = list(range(n1)) + list(range(1, n1))
        cols = list(range(n1)) + list(range(n1 - 1))
        vals = list(diag) + list(off)
        return SparseSymmetric(order=n1, rows=rows, cols=cols, vals=vals)

    a_mat = tridiag(diag_a, off_a)
    c_mat = tridiag(diag_c, off_c)
    return SdpProblem(
        cost=c_mat, constraints=[a_mat], b=np.array([1.0])
    )
