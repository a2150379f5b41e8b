"""Ring perception, all-pairs shortest paths and pairwise path features."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .smiles import BOND_ORDERS, MolGraph

__all__ = [
    "RingSet",
    "ShortestPaths",
    "PathFeatureTensor",
    "BOND_FEATURES",
    "UNREACHABLE",
    "bond_features",
    "cyclic_edges",
    "perceive_rings",
    "all_pairs_shortest",
    "path_features",
    "num_path_features",
    "path_feature_layout",
]

BOND_FEATURES = len(BOND_ORDERS) + 2
UNREACHABLE = -1


def _bfs_path(adjacency, start: int, goal: int, banned: tuple[int, int]) -> list[int] | None:
    # neighbors expanded in ascending order, so the returned path is deterministic
    prev = {start: None}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == goal:
            break
        for v in adjacency[u]:
            if (u, v) == banned or (v, u) == banned or v in prev:
                continue
            prev[v] = u
            queue.append(v)
    if goal not in prev:
        return None
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def cyclic_edges(n: int, adjacency) -> set[tuple[int, int]]:
    """Edges (as sorted pairs) lying on at least one cycle."""
    out = set()
    for u in range(n):
        for v in adjacency[u]:
            if u < v and _bfs_path(adjacency, u, v, (u, v)) is not None:
                out.add((u, v))
    return out


@dataclass(frozen=True)
class RingSet:
    rings: tuple[tuple[int, ...], ...]
    per_bond_ring: tuple[bool, ...]
    aromatic5: tuple[bool, ...]
    aromatic6: tuple[bool, ...]

    def atom_rings(self, n_atoms: int) -> list[set[int]]:
        """Indices of the rings each atom belongs to."""
        out = [set() for _ in range(n_atoms)]
        for r, ring in enumerate(self.rings):
            for a in ring:
                out[a].add(r)
        return out

    def same_ring(self, i: int, j: int) -> bool:
        return any(i in ring and j in ring for ring in self.rings)


def perceive_rings(g: MolGraph) -> RingSet:
    """Smallest cycle through every ring bond, deduplicated.

    For each bond (u, v) the bond is removed and a BFS from u to v gives the
    shortest alternative route; that route plus the bond is the smallest
    ring containing the bond.
    """
    rings: list[tuple[int, ...]] = []
    seen: set[frozenset[int]] = set()
    for b in g.bonds:
        path = _bfs_path(g.adjacency, b.begin, b.end, (b.begin, b.end))
        if path is None:
            continue
        key = frozenset(path)
        if key in seen:
            continue
        seen.add(key)
        rings.append(tuple(path))

    ring_edges = set()
    for ring in rings:
        for k in range(len(ring)):
            a, c = ring[k], ring[(k + 1) % len(ring)]
            ring_edges.add((min(a, c), max(a, c)))
    per_bond = tuple((min(b.begin, b.end), max(b.begin, b.end)) in ring_edges for b in g.bonds)
    arom = [all(g.atoms[a].is_aromatic for a in ring) for ring in rings]
    return RingSet(
        rings=tuple(rings),
        per_bond_ring=per_bond,
        aromatic5=tuple(a and len(r) == 5 for a, r in zip(arom, rings)),
        aromatic6=tuple(a and len(r) == 6 for a, r in zip(arom, rings)),
    )


@dataclass(frozen=True)
class ShortestPaths:
    """BFS distances and lowest-index predecessors for every source.

    ``dist[i, j]`` is ``UNREACHABLE`` (-1) across components.
    ``pred[i, j]`` is the predecessor of ``j`` on the chosen path from ``i``.
    """

    dist: np.ndarray
    pred: np.ndarray

    def path(self, i: int, j: int) -> list[int] | None:
        if self.dist[i, j] == UNREACHABLE:
            return None
        nodes = [j]
        while nodes[-1] != i:
            nodes.append(int(self.pred[i, nodes[-1]]))
        return nodes[::-1]


def all_pairs_shortest(g: MolGraph) -> ShortestPaths:
    n = g.n_atoms
    dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
    pred = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in g.adjacency[u]:
                if dist[s, v] == UNREACHABLE:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
        for v in range(n):
            if v == s or dist[s, v] == UNREACHABLE:
                continue
            pred[s, v] = min(u for u in g.adjacency[v] if dist[s, u] == dist[s, v] - 1)
    return ShortestPaths(dist, pred)


def bond_features(g: MolGraph, bond_index: int) -> np.ndarray:
    """Bond-type one-hot, conjugated flag, in-ring flag."""
    b = g.bonds[bond_index]
    f = np.zeros(BOND_FEATURES)
    f[BOND_ORDERS.index(b.order)] = 1.0
    f[len(BOND_ORDERS)] = float(b.is_conjugated)
    f[len(BOND_ORDERS) + 1] = float(b.in_ring)
    return f


def num_path_features(d: int) -> int:
    return d * BOND_FEATURES + (d + 1) + 3


def path_feature_layout(d: int) -> dict[str, tuple[int, int]]:
    """Start/stop offsets of each block inside a path feature vector."""
    e = d * BOND_FEATURES
    return {"edges": (0, e), "distance": (e, e + d + 1), "rings": (e + d + 1, e + d + 4)}


@dataclass(frozen=True)
class PathFeatureTensor:
    p: np.ndarray
    d: int
    dist: np.ndarray

    @property
    def n_features(self) -> int:
        return self.p.shape[-1]


def path_features(
    g: MolGraph,
    rings: RingSet | None = None,
    d: int = 3,
    paths: ShortestPaths | None = None,
) -> PathFeatureTensor:
    """Features for every ordered atom pair, shape ``(n, n, F_p)``.

    Per pair: bond features along the shortest path (slot k holds the k-th
    bond from ``i``), zero padded to ``d`` slots and fully zeroed when the
    path is longer than ``d``; a distance one-hot over ``1..d`` plus one
    shared bin for ``> d`` or unreachable; flags for sharing any ring, an
    aromatic 5-ring and an aromatic 6-ring.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if rings is None:
        rings = perceive_rings(g)
    if paths is None:
        paths = all_pairs_shortest(g)
    n = g.n_atoms
    layout = path_feature_layout(d)
    dist_start = layout["distance"][0]
    ring_start = layout["rings"][0]
    p = np.zeros((n, n, num_path_features(d)))

    bond_feats = np.array([bond_features(g, k) for k in range(len(g.bonds))]).reshape(-1, BOND_FEATURES)
    index = g.bond_index

    atom_rings = rings.atom_rings(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            m = int(paths.dist[i, j])
            if m == UNREACHABLE or m > d:
                p[i, j, dist_start + d] = 1.0
            else:
                p[i, j, dist_start + m - 1] = 1.0
                nodes = paths.path(i, j)
                for k in range(m):
                    a, c = nodes[k], nodes[k + 1]
                    bk = index[(min(a, c), max(a, c))]
                    p[i, j, k * BOND_FEATURES : (k + 1) * BOND_FEATURES] = bond_feats[bk]
            shared = atom_rings[i] & atom_rings[j]
            if shared:
                p[i, j, ring_start] = 1.0
                p[i, j, ring_start + 1] = float(any(rings.aromatic5[r] for r in shared))
                p[i, j, ring_start + 2] = float(any(rings.aromatic6[r] for r in shared))
    return PathFeatureTensor(p=p, d=d, dist=paths.dist.copy())
