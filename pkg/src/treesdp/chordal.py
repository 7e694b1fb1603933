"""Undirected graphs, elimination orderings, and clique-tree decompositions.

The decomposition pipeline is: aggregate a sparsity pattern into a graph,
choose an elimination order (greedy minimum degree by default), run a symbolic
factorization to obtain one bag per vertex with elimination-tree parents, then
merge nested bags (supernodes).  The result is a rooted tree of index sets
covering all vertices and edges and satisfying the running-intersection
property.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ParseError
from .linalg import SparseSymmetric


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on vertices 0..n-1."""

    n: int
    edges: tuple

    def __init__(self, n: int, edges):
        canon = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                continue
            if not (0 <= u < n and 0 <= v < n):
                raise DimensionMismatch(
                    f"edge ({u + 1}, {v + 1}) out of range for n={n}"
                )
            canon.add((min(u, v), max(u, v)))
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @property
    def m(self) -> int:
        return len(self.edges)

    def adjacency(self) -> list:
        adj = [set() for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj


def parse_graph(text: str) -> Graph:
    """Parse the plain edge-list format: a header line ``n m`` followed by
    m lines ``u v`` (1-based, an optional trailing weight column is ignored).
    Blank lines and lines starting with ``#`` are skipped."""
    header = None
    edges = []
    n = m = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 2:
                raise ParseError(f"line {lineno}: expected header 'n m'")
            try:
                n, m = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer header fields")
            if n < 0 or m < 0:
                raise ParseError(f"line {lineno}: negative header fields")
            header = (n, m)
            continue
        if len(parts) not in (2, 3):
            raise ParseError(f"line {lineno}: expected 'u v' or 'u v w'")
        try:
            u, v = int(parts[0]), int(parts[1])
            if len(parts) == 3:
                float(parts[2])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric edge fields")
        if not (1 <= u <= n and 1 <= v <= n):
            raise ParseError(f"line {lineno}: vertex out of range [1, {n}]")
        edges.append((u - 1, v - 1))
    if header is None:
        raise ParseError("line 1: empty graph file")
    if len(edges) != m:
        raise ParseError(
            f"line {len(text.splitlines())}: header promised {m} edges, "
            f"found {len(edges)}"
        )
    return Graph(n=n, edges=edges)


def format_graph(graph: Graph) -> str:
    lines = [f"{graph.n} {graph.m}"]
    for u, v in graph.edges:
        lines.append(f"{u + 1} {v + 1}")
    return "\n".join(lines) + "\n"


def parse_permutation(text: str, n: int) -> list:
    """Parse a whitespace-separated 1-based permutation of 1..n."""
    try:
        vals = [int(tok) for tok in text.split()]
    except ValueError:
        raise ParseError("line 1: permutation file must contain integers")
    if sorted(vals) != list(range(1, n + 1)):
        raise ParseError(f"line 1: not a permutation of 1..{n}")
    return [v - 1 for v in vals]


# --------------------------------------------------------------------------


@dataclass
class TreeDecomposition:
    """Rooted tree of bags (index sets).  ``parent[j] == j`` exactly at the
    root; every bag is stored sorted ascending."""

    n: int
    bags: list  # list of sorted tuples of vertex ids
    parent: np.ndarray

    def __post_init__(self):
        self.bags = [tuple(sorted(int(v) for v in bag)) for bag in self.bags]
        self.parent = np.asarray(self.parent, dtype=np.int64)

    @property
    def ell(self) -> int:
        return len(self.bags)

    @property
    def width(self) -> int:
        return max(len(b) for b in self.bags) - 1 if self.bags else -1

    @property
    def omega(self) -> int:
        """Largest bag size (clique number bound)."""
        return self.width + 1

    @property
    def root(self) -> int:
        roots = [j for j in range(self.ell) if self.parent[j] == j]
        return roots[0] if roots else -1

    def children_lists(self) -> list:
        ch = [[] for _ in range(self.ell)]
        for j in range(self.ell):
            p = int(self.parent[j])
            if p != j:
                ch[p].append(j)
        return ch

    def postorder(self) -> list:
        """Deterministic postorder: children before parents, smallest child
        index first (iterative DFS from the root)."""
        ch = self.children_lists()
        order = []
        stack = [(self.root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            stack.append((node, True))
            for c in sorted(ch[node], reverse=True):
                stack.append((c, False))
        return order

    def separator(self, j: int) -> tuple:
        """Intersection of bag j with its parent bag (empty at the root)."""
        p = int(self.parent[j])
        if p == j:
            return tuple()
        parent_set = set(self.bags[p])
        return tuple(v for v in self.bags[j] if v in parent_set)

    def bags_containing(self) -> list:
        holds = [[] for _ in range(self.n)]
        for j, bag in enumerate(self.bags):
            for v in bag:
                holds[v].append(j)
        return holds

    def owner_bag(self) -> np.ndarray:
        """For each vertex, the root-most bag containing it (unique by the
        running-intersection property)."""
        owner = -np.ones(self.n, dtype=np.int64)
        for j, bag in enumerate(self.bags):
            p = int(self.parent[j])
            parent_set = set(self.bags[p]) if p != j else set()
            for v in bag:
                if p == j or v not in parent_set:
                    owner[v] = j
        return owner

    def validate(self, graph: Graph | None = None) -> list:
        """Collect violations of the decomposition axioms (empty == valid)."""
        problems = []
        ell = self.ell
        if self.parent.shape != (ell,):
            problems.append("parent array length mismatch")
            return problems
        roots = [j for j in range(ell) if int(self.parent[j]) == j]
        if len(roots) != 1:
            problems.append(f"expected exactly one root, found {len(roots)}")
        for j in range(ell):
            p = int(self.parent[j])
            if not (0 <= p < ell):
                problems.append(f"bag {j + 1}: parent out of range")
        # acyclicity / reachability
        if len(roots) == 1:
            seen = set()
            for j in range(ell):
                path = []
                cur = j
                while cur not in seen and int(self.parent[cur]) != cur:
                    path.append(cur)
                    cur = int(self.parent[cur])
                    if cur in path:
                        problems.append(f"bag {j + 1}: parent cycle")
                        break
                seen.update(path)
        covered = set()
        for bag in self.bags:
            covered.update(bag)
        missing = set(range(self.n)) - covered
        if missing:
            problems.append(
                f"vertices not covered: {sorted(v + 1 for v in missing)}"
            )
        if graph is not None:
            bag_sets = [set(b) for b in self.bags]
            for u, v in graph.edges:
                if not any(u in bs and v in bs for bs in bag_sets):
                    problems.append(f"edge ({u + 1}, {v + 1}) not covered")
        # running intersection: bags holding v form a connected subtree
        holds = self.bags_containing()
        for v in range(self.n):
            js = holds[v]
            if len(js) <= 1:
                continue
            js_set = set(js)
            root_count = 0
            for j in js:
                p = int(self.parent[j])
                if p == j or p not in js_set:
                    root_count += 1
            if root_count != 1:
                problems.append(
                    f"vertex {v + 1}: bags containing it form "
                    f"{root_count} subtrees"
                )
        if ell > self.n:
            problems.append(f"{ell} bags exceed n = {self.n}")
        return problems


def format_decomposition(td: TreeDecomposition) -> str:
    """One line per bag: ``j p(j) |J_j| : members`` (all 1-based)."""
    lines = []
    for j, bag in enumerate(td.bags):
        members = " ".join(str(v + 1) for v in bag)
        lines.append(f"{j + 1} {int(td.parent[j]) + 1} {len(bag)} : {members}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------


def sparsity_graph(cost: SparseSymmetric, constraints: list) -> Graph:
    """Aggregate sparsity pattern of the cost and all constraint matrices.

    Stored entries count as structural even when their value is zero."""
    n = cost.order
    edges = set()

    def absorb(sp: SparseSymmetric):
        if sp.order != n:
            raise DimensionMismatch(
                f"constraint order {sp.order} != cost order {n}"
            )
        for r, c in zip(sp.rows, sp.cols):
            if r != c:
                edges.add((int(c), int(r)))

    absorb(cost)
    for sp in constraints:
        absorb(sp)
    return Graph(n=n, edges=edges)


def min_degree_order(graph: Graph) -> list:
    """Greedy minimum-degree elimination order; ties break to the smallest
    vertex id.  Deterministic."""
    adj = graph.adjacency()
    alive = set(range(graph.n))
    order = []
    for _ in range(graph.n):
        best = min(alive, key=lambda v: (len(adj[v]), v))
        order.append(best)
        nbrs = adj[best]
        for u in nbrs:
            adj[u].discard(best)
        nbr_list = sorted(nbrs)
        for i, u in enumerate(nbr_list):
            for w in nbr_list[i + 1:]:
                adj[u].add(w)
                adj[w].add(u)
        adj[best] = set()
        alive.discard(best)
    return order


def symbolic_factor(graph: Graph, order: list | None = None) -> TreeDecomposition:
    """Symbolic Cholesky of the permuted pattern: one bag per vertex
    (the vertex plus its later neighbors in the filled graph), parent = bag of
    the earliest-eliminated later neighbor.  Disconnected components produce
    an elimination forest; every non-final component root is re-parented to
    the final root so the result is a single tree."""
    if order is None:
        order = min_degree_order(graph)
    n = graph.n
    if sorted(order) != list(range(n)):
        raise DimensionMismatch("elimination order is not a permutation")
    pos = {v: k for k, v in enumerate(order)}
    adj = graph.adjacency()
    bags = []
    parent = np.arange(n, dtype=np.int64)
    for k, v in enumerate(order):
        nbrs = adj[v]  # uneliminated neighbors in the current filled graph
        bags.append(tuple(sorted([v] + list(nbrs))))
        if nbrs:
            first = min(nbrs, key=lambda u: pos[u])
            parent[k] = pos[first]
        for u in nbrs:
            adj[u].discard(v)
        nbr_list = sorted(nbrs)
        for i, u in enumerate(nbr_list):
            for w in nbr_list[i + 1:]:
                adj[u].add(w)
                adj[w].add(u)
        adj[v] = set()
    roots = [j for j in range(n) if parent[j] == j]
    final_root = max(roots) if roots else n - 1
    for r in roots:
        if r != final_root:
            parent[r] = final_root
    return TreeDecomposition(n=n, bags=bags, parent=parent)


def supernode_merge(td: TreeDecomposition) -> TreeDecomposition:
    """Merge nested bags: a bag that is a subset of its parent is absorbed
    into the parent, and a parent that is a subset of a child is absorbed
    into that child.  Repeats to a fixpoint; idempotent; width unchanged."""
    bags = [set(b) for b in td.bags]
    parent = [int(p) for p in td.parent]
    alive = [True] * len(bags)

    def find(j):
        while not alive[j]:
            j = parent[j]
        return j

    changed = True
    while changed:
        changed = False
        for j in range(len(bags)):
            if not alive[j]:
                continue
            p = find(parent[j]) if parent[j] != j else j
            parent[j] = p
            if p == j:
                continue
            if bags[j] <= bags[p]:
                # child absorbed into parent
                alive[j] = False
                parent[j] = p
                changed = True
            elif bags[p] <= bags[j]:
                # parent absorbed into child: child takes the parent's place
                bags[j] |= bags[p]
                gp = find(parent[p]) if parent[p] != p else p
                alive[p] = False
                parent[p] = j
                parent[j] = j if gp == p else gp
                changed = True
    keep = [j for j in range(len(bags)) if alive[j]]
    index = {j: i for i, j in enumerate(keep)}
    new_bags = [tuple(sorted(bags[j])) for j in keep]
    new_parent = np.zeros(len(keep), dtype=np.int64)
    for i, j in enumerate(keep):
        p = parent[j]
        if p != j:
            p = find(p)
        new_parent[i] = index[p]
    return TreeDecomposition(n=td.n, bags=new_bags, parent=new_parent)


def decompose(graph: Graph, order: list | None = None) -> TreeDecomposition:
    """Full pipeline: ordering (min-degree unless supplied), symbolic
    factorization, supernode merge."""
    return supernode_merge(symbolic_factor(graph, order))
