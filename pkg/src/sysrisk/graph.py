"""Interbank network topologies and their structural measures.

Nodes are labelled ``1..N`` in every user-facing input and output (edge
lists, cut-point sets, named topologies). Per-node arrays are positional,
so entry ``k`` of an array belongs to node ``k + 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import networkx as nx
import numpy as np

PAGERANK_ALPHA = 0.85
PAGERANK_BETA = 1.0
MAX_ENUMERATION_NODES = 7


class TopologyError(ValueError):
    """Base class for invalid topology input."""


class NodeIndexError(TopologyError):
    pass


class SelfLoopError(TopologyError):
    pass


class DuplicateEdgeError(TopologyError):
    pass


class DisconnectedError(TopologyError):
    pass


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected simple graph; every edge is a two-way lending relationship."""

    n_banks: int
    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=np.int8)
        if adj.shape != (self.n_banks, self.n_banks):
            raise TopologyError(f"adjacency must be {self.n_banks}x{self.n_banks}, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise SelfLoopError("adjacency must have a zero diagonal")
        if not np.all((adj == 0) | (adj == 1)):
            raise TopologyError("adjacency entries must be 0 or 1")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Sorted 1-indexed edge list with ``i < j``."""
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i) + 1, int(j) + 1) for i, j in zip(iu, ju)]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(1, self.n_banks + 1))
        g.add_edges_from(self.edges)
        return g

    def relabel(self, perm: Iterable[int]) -> "Topology":
        """Return the graph with node ``perm[k]`` renamed to ``k + 1`` (1-indexed perm)."""
        p = np.asarray(list(perm), dtype=np.int64) - 1
        return Topology(self.n_banks, self.adjacency[np.ix_(p, p)])

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return self.n_banks == other.n_banks and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash((self.n_banks, self.adjacency.tobytes()))

    def __repr__(self):
        return f"Topology(n_banks={self.n_banks}, edges={self.edges})"


@dataclass(frozen=True)
class CentralityScores:
    pagerank: np.ndarray
    degree: np.ndarray
    alpha: float
    beta: float


@dataclass(frozen=True)
class FragilityMeasures:
    entropy: float
    hhi: float
    link_shares: np.ndarray


def build_topology(n_banks: int, edges: Iterable[tuple[int, int]]) -> Topology:
    if n_banks < 1:
        raise TopologyError(f"n_banks must be positive, got {n_banks}")
    adj = np.zeros((n_banks, n_banks), dtype=np.int8)
    for i, j in edges:
        i, j = int(i), int(j)
        if not (1 <= i <= n_banks and 1 <= j <= n_banks):
            raise NodeIndexError(f"edge ({i}, {j}) has a node outside 1..{n_banks}")
        if i == j:
            raise SelfLoopError(f"self-loop at node {i}")
        if adj[i - 1, j - 1]:
            raise DuplicateEdgeError(f"duplicate edge ({i}, {j})")
        adj[i - 1, j - 1] = adj[j - 1, i - 1] = 1
    return Topology(n_banks, adj)


def complete_graph(n: int) -> Topology:
    return build_topology(n, itertools.combinations(range(1, n + 1), 2))


def empty_graph(n: int) -> Topology:
    return build_topology(n, [])


def is_connected(t: Topology) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(t.adjacency[u]):
            if v not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return len(seen) == t.n_banks


def pagerank(t: Topology, alpha: float = PAGERANK_ALPHA, beta: float = PAGERANK_BETA) -> CentralityScores:
    """Solve ``y = alpha * A D^-1 y + beta`` directly.

    Every node must have at least one link, otherwise its out-degree is zero.
    """
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    deg = t.degree
    if np.any(deg == 0):
        isolated = [int(k) + 1 for k in np.flatnonzero(deg == 0)]
        raise DisconnectedError(f"pagerank undefined with isolated nodes {isolated}")
    transfer = t.adjacency / deg[np.newaxis, :]
    y = np.linalg.solve(np.eye(t.n_banks) - alpha * transfer, np.full(t.n_banks, float(beta)))
    return CentralityScores(pagerank=y, degree=deg, alpha=alpha, beta=beta)


def _shares_measures(shares: np.ndarray) -> FragilityMeasures:
    nz = shares[shares > 0]
    entropy = float(-np.sum(nz * np.log(nz)))
    return FragilityMeasures(entropy=max(entropy, 0.0), hhi=float(np.sum(shares**2)), link_shares=shares)


def fragility(t: Topology, weighting: str = "degree") -> FragilityMeasures:
    """Network entropy (natural log) and HHI of per-node link shares.

    ``weighting="degree"`` uses each node's share of link endpoints;
    ``weighting="pagerank"`` uses normalised PageRank scores instead.
    """
    if weighting == "degree":
        deg = t.degree.astype(float)
        total = deg.sum()
        if total == 0:
            raise TopologyError("degree weighting needs at least one edge")
        shares = deg / total
    elif weighting == "pagerank":
        y = pagerank(t).pagerank
        shares = y / y.sum()
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    return _shares_measures(shares)


def cut_points(t: Topology) -> frozenset[int]:
    """Articulation points (1-indexed)."""
    return frozenset(int(v) for v in nx.articulation_points(t.to_networkx()))


# -- isomorphism classes -------------------------------------------------------

def _canonical(adj: np.ndarray) -> tuple[int, tuple[int, ...]]:
    """Canonical code and vertex order of a small graph.

    The code is the maximal upper-triangle bitstring over all vertex orders
    that list vertices by non-increasing degree. Restricting the search to
    degree-sorted orders keeps it isomorphism-invariant while avoiding the
    full n! sweep on irregular graphs.
    """
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    classes = [np.flatnonzero(deg == d).tolist() for d in sorted(set(deg.tolist()), reverse=True)]
    iu, ju = np.triu_indices(n, 1)
    weights = 1 << np.arange(len(iu) - 1, -1, -1, dtype=np.int64)
    orders = np.array(
        [sum(parts, ()) for parts in itertools.product(*(itertools.permutations(c) for c in classes))],
        dtype=np.int64,
    )
    bits = adj[orders[:, iu], orders[:, ju]].astype(np.int64)
    codes = bits @ weights
    best = int(np.argmax(codes))
    return int(codes[best]), tuple(int(v) for v in orders[best])


def canonical_form(t: Topology) -> Topology:
    _, order = _canonical(np.asarray(t.adjacency))
    return t.relabel([v + 1 for v in order])


def is_isomorphic(t1: Topology, t2: Topology) -> bool:
    if t1.n_banks != t2.n_banks:
        return False
    return _canonical(np.asarray(t1.adjacency))[0] == _canonical(np.asarray(t2.adjacency))[0]


def enumerate_connected_topologies(n: int) -> list[Topology]:
    """One canonical representative per isomorphism class of connected graphs on ``n`` nodes."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if n > MAX_ENUMERATION_NODES:
        raise ValueError(f"enumeration is limited to n <= {MAX_ENUMERATION_NODES}, got {n}")
    pairs = list(itertools.combinations(range(n), 2))
    empty = np.zeros((n, n), dtype=np.int8)
    level = {_canonical(empty)[0]: empty}
    found = dict(level)
    # Orderly augmentation: every class with m+1 edges arises from some class with m edges.
    for _ in range(len(pairs)):
        nxt = {}
        for adj in level.values():
            for i, j in pairs:
                if adj[i, j]:
                    continue
                cand = adj.copy()
                cand[i, j] = cand[j, i] = 1
                code, order = _canonical(cand)
                if code not in nxt:
                    o = np.asarray(order)
                    nxt[code] = cand[np.ix_(o, o)]
        found.update(nxt)
        level = nxt
    out = [Topology(n, adj) for adj in found.values()]
    out = [t for t in out if is_connected(t)]
    out.sort(key=lambda t: (t.n_edges, tuple(t.edges)))
    return out


# -- named five-bank networks --------------------------------------------------

# Reconstructed edge sets for the eight five-bank structures (a)-(h). Each is
# named by its degree sequence; node 1 is the best-connected bank throughout.
NAMED_EDGES: dict[str, tuple[str, list[tuple[int, int]]]] = {
    "a": ("3-2-1-1-1", [(1, 2), (1, 3), (1, 4), (4, 5)]),
    "b": ("2-2-2-1-1", [(1, 2), (1, 3), (2, 4), (3, 5)]),
    "c": ("3-3-2-1-1", [(1, 2), (1, 3), (1, 4), (2, 3), (2, 5)]),
    "d": ("4-1-1-1-1", [(1, 2), (1, 3), (1, 4), (1, 5)]),
    "e": ("3-2-2-2-1", [(1, 2), (1, 4), (1, 5), (2, 3), (3, 4)]),
    "f": ("4-2-2-1-1", [(1, 2), (1, 3), (1, 4), (1, 5), (2, 3)]),
    "g": ("4-2-2-2-2", [(1, 2), (1, 3), (1, 4), (1, 5), (2, 3), (4, 5)]),
    "h": ("4-3-3-3-3", [(1, 2), (1, 3), (1, 4), (1, 5), (2, 3), (3, 4), (4, 5), (2, 5)]),
}


def _short_name(degree_name: str) -> str:
    distinct = sorted({int(d) for d in degree_name.split("-")}, reverse=True)
    return "-".join(str(d) for d in distinct)


def named_topologies() -> dict[str, Topology]:
    """The eight named five-bank networks.

    Keys: ``"a"`` and ``"(a)"`` style letters, the full degree-sequence name
    (``"4-1-1-1-1"``), and the distinct-degree short name (``"2-1"``) when it
    is unique among the eight.
    """
    data = resources.files("sysrisk") / "data" / "topologies"
    out: dict[str, Topology] = {}
    shorts: dict[str, list[str]] = {}
    for letter, (name, _) in NAMED_EDGES.items():
        t = read_edge_list((data / f"{letter}.txt").read_text())
        out[letter] = out[f"({letter})"] = out[name] = t
        shorts.setdefault(_short_name(name), []).append(letter)
    for short, letters in shorts.items():
        if len(letters) == 1 and short not in out:
            out[short] = out[letters[0]]
    return out


def named_letters() -> list[str]:
    return list(NAMED_EDGES)


# -- edge-list text format -------------------------------------------------------

def read_edge_list(text: str) -> Topology:
    """Parse ``N`` on the first line followed by one 1-indexed ``i j`` pair per line."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise TopologyError("empty edge-list")
    try:
        n = int(lines[0])
        edges = [tuple(int(x) for x in ln.split()) for ln in lines[1:]]
    except ValueError as exc:
        raise TopologyError(f"malformed edge-list: {exc}") from None
    for e in edges:
        if len(e) != 2:
            raise TopologyError(f"edge line must hold two node indices, got {e}")
    return build_topology(n, edges)


def write_edge_list(t: Topology) -> str:
    return "\n".join([str(t.n_banks)] + [f"{i} {j}" for i, j in t.edges]) + "\n"


def load_edge_list(path: str | Path) -> Topology:
    return read_edge_list(Path(path).read_text())


def degree_name(t: Topology) -> str:
    return "-".join(str(d) for d in sorted(t.degree.tolist(), reverse=True))


def max_entropy(n: int) -> float:
    return math.log(n)
