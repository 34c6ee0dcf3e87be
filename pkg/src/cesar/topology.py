"""Aggregation graphs: random k-regular generation and neighbourhood queries."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import GenerationFailure, InvalidRegularity, NotNeighbors

RETRY_BUDGET = 1000


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph on nodes ``0..n-1``.

    ``edges`` holds canonical ``(u, v)`` pairs with ``u < v``. Instances are
    immutable and safe to share between workers.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < v < self.n):
                raise ValueError(f"edge {(u, v)} is not canonical or out of range")
            adj[u].add(v)
            adj[v].add(u)
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        canon = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            e = (u, v) if u < v else (v, u)
            if e in canon:
                raise ValueError(f"duplicate edge {e}")
            canon.add(e)
        return cls(n, frozenset(canon))

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def has_edge(self, u: int, v: int) -> bool:
        return ((u, v) if u < v else (v, u)) in self.edges

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = {0}
        frontier = [0]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.adjacency[u]:
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
        return len(seen) == self.n


# -- queries -------------------------------------------------------------------


def view(t: Topology, i: int) -> tuple[int, ...]:
    return t.adjacency[i]


def view2(t: Topology, i: int) -> tuple[int, ...]:
    """Nodes reachable through one intermediate neighbour, excluding ``i``.

    Direct neighbours are included when they close a triangle with ``i``.
    """
    out: set[int] = set()
    for m in t.adjacency[i]:
        out.update(t.adjacency[m])
    out.discard(i)
    return tuple(sorted(out))


def comm_set(t: Topology, receiver: int, sender: int) -> tuple[int, ...]:
    """The receiver's other neighbours: the sender's mask partners for it."""
    if not t.has_edge(receiver, sender):
        raise NotNeighbors(f"nodes {receiver} and {sender} are not adjacent")
    return tuple(j for j in t.adjacency[receiver] if j != sender)


def avg_second_degree_size(t: Topology) -> float:
    if t.n == 0:
        return 0.0
    return float(np.mean([len(view2(t, i)) for i in range(t.n)]))


# -- generation ------------------------------------------------------------------


def _pair_stubs(n: int, k: int, rng: np.random.Generator) -> np.ndarray | None:
    """One attempt at pairing half-edges into a simple k-regular graph.

    Stubs are shuffled and paired; pairs forming self-loops or repeated edges
    go back to the pool and are re-shuffled. The attempt is abandoned when no
    admissible pair is left among the remaining stubs.
    Returns the boolean adjacency matrix, or None on a dead end.
    """
    adj = np.zeros((n, n), dtype=bool)
    stubs = np.repeat(np.arange(n), k)
    while stubs.size:
        rng.shuffle(stubs)
        a, b = stubs[0::2], stubs[1::2]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * n + hi
        ok = (lo != hi) & ~adj[lo, hi]
        # keep only the first occurrence of an edge within this batch
        _, first = np.unique(key, return_index=True)
        is_first = np.zeros(key.size, dtype=bool)
        is_first[first] = True
        ok &= is_first
        adj[lo[ok], hi[ok]] = True
        adj[hi[ok], lo[ok]] = True
        stubs = np.concatenate([a[~ok], b[~ok]])
        if stubs.size:
            nodes = np.unique(stubs)
            sub = adj[np.ix_(nodes, nodes)]
            np.fill_diagonal(sub, True)
            if sub.all():
                return None
    return adj


def _connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = seen.copy()
    while frontier.any():
        reach = adj[frontier].any(axis=0) & ~seen
        seen |= reach
        frontier = reach
    return bool(seen.all())


def regular_adjacency(n: int, k: int, seed: int | np.random.Generator,
                      require_connected: bool = True) -> np.ndarray:
    """Boolean adjacency matrix of a random simple k-regular graph.

    ``seed`` may be a Generator, in which case it is advanced in place.
    """
    if k < 0 or k >= n or (n * k) % 2:
        raise InvalidRegularity(
            f"no simple {k}-regular graph on {n} nodes (regularity needs n*k even and 0 <= k < n)"
        )
    rng = np.random.default_rng(seed)
    if k == 0:
        adj = np.zeros((n, n), dtype=bool)
        if require_connected and n > 1:
            raise GenerationFailure("a 0-regular graph on more than one node is disconnected")
        return adj
    for _ in range(RETRY_BUDGET):
        adj = _pair_stubs(n, k, rng)
        if adj is None:
            continue
        if require_connected and not _connected(adj):
            continue
        return adj
    raise GenerationFailure(f"no valid {k}-regular graph on {n} nodes after {RETRY_BUDGET} attempts")


def gen_regular_graph(n: int, k: int, seed: int) -> Topology:
    """Random connected simple k-regular graph; a pure function of its arguments."""
    adj = regular_adjacency(n, k, seed)
    us, vs = np.nonzero(np.triu(adj, 1))
    return Topology(n, frozenset(zip(us.tolist(), vs.tolist())))


# -- edge-list text format ----------------------------------------------------------


def to_edge_list(t: Topology) -> str:
    """One ``"u v"`` line per edge, ``u < v``, sorted lexicographically."""
    return "".join(f"{u} {v}\n" for u, v in t.sorted_edges())


def from_edge_list(text: str, n: int | None = None) -> Topology:
    edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'u v', got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    return Topology.from_edges(n, edges)


def write_edge_list(t: Topology, path: str | Path) -> None:
    Path(path).write_text(to_edge_list(t))


def read_edge_list(path: str | Path, n: int | None = None) -> Topology:
    return from_edge_list(Path(path).read_text(), n)


def complete_graph(n: int) -> Topology:
    return Topology(n, frozenset((u, v) for u in range(n) for v in range(u + 1, n)))


def cycle_graph(n: int) -> Topology:
    return Topology.from_edges(n, [(i, (i + 1) % n) for i in range(n)])
