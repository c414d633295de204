"""Directed interaction graphs, BFS layers around a root, and the layer counts
that drive the decay recursions.

Conventions
- ``in_neighbors[i]`` lists the players whose states enter player ``i``'s costs
  (``j in in_neighbors[i]`` means ``j ~ i``).
- Layers are grown by following these lists outward from the root, so layer ``h``
  holds the vertices at directed distance ``h``.
- ``N_k^h`` counts the layer-``h`` vertices whose costs read ``k``.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Graph:
    in_neighbors: tuple[tuple[int, ...], ...]
    labels: tuple | None = None

    def __post_init__(self):
        n = len(self.in_neighbors)
        for i, nbrs in enumerate(self.in_neighbors):
            if i in nbrs:
                raise ValueError(f"self-loop at vertex {i}")
            if any(j < 0 or j >= n for j in nbrs):
                raise ValueError(f"neighbor index out of range at vertex {i}")
            if any(a >= b for a, b in zip(nbrs, nbrs[1:])):
                raise ValueError(f"neighbor list of {i} must be sorted and duplicate-free")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels must have one entry per vertex")

    @classmethod
    def from_lists(cls, lists: Iterable[Iterable[int]], labels=None) -> "Graph":
        """Build from arbitrary-order neighbor lists; duplicates are rejected."""
        normalized = []
        for i, nbrs in enumerate(lists):
            nbrs = [int(j) for j in nbrs]
            if len(set(nbrs)) != len(nbrs):
                raise ValueError(f"duplicate neighbor in list of vertex {i}")
            normalized.append(tuple(sorted(nbrs)))
        if labels is not None:
            labels = tuple(tuple(x) if isinstance(x, (list, tuple)) else x for x in labels)
        return cls(tuple(normalized), labels)

    @property
    def n(self) -> int:
        return len(self.in_neighbors)

    def is_undirected(self) -> bool:
        return all(i in self.in_neighbors[j] for i, nbrs in enumerate(self.in_neighbors) for j in nbrs)

    def index_of(self, label) -> int:
        if self.labels is None:
            raise ValueError("graph has no labels")
        return self.labels.index(tuple(label) if isinstance(label, list) else label)

    def to_json_dict(self) -> dict:
        out = {"n": self.n, "in_neighbors": [list(x) for x in self.in_neighbors]}
        if self.labels is not None:
            out["labels"] = [list(x) if isinstance(x, tuple) else x for x in self.labels]
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Graph":
        n = int(doc["n"])
        lists = doc["in_neighbors"]
        if len(lists) != n:
            raise ValueError(f"'in_neighbors' has {len(lists)} entries, expected n={n}")
        return cls.from_lists(lists, doc.get("labels"))


def load_graph(path) -> Graph:
    return Graph.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def dump_graph(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(g.to_json_dict()) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------------
# generators
# ----------------------------------------------------------------------------

def build_chain(n: int, cyclic: bool = True) -> Graph:
    if n < 1:
        raise ValueError("chain needs at least one vertex")
    if cyclic and n < 3:
        raise ValueError("a cyclic chain needs at least 3 vertices")
    if cyclic:
        return Graph.from_lists([{(i - 1) % n, (i + 1) % n} for i in range(n)])
    return Graph.from_lists([[j for j in (i - 1, i + 1) if 0 <= j < n] for i in range(n)])


def spiral_points(radius: int) -> list[tuple[int, int]]:
    """Points of the l1-ball of Z^2: origin first, then each ring |x|+|y| = r
    counterclockwise starting from (r, 0)."""
    pts = [(0, 0)]
    for r in range(1, radius + 1):
        pts += [(r - t, t) for t in range(r)]
        pts += [(-t, r - t) for t in range(r)]
        pts += [(-r + t, -t) for t in range(r)]
        pts += [(t, -r + t) for t in range(r)]
    return pts


def _signs(c: int) -> tuple[int, ...]:
    # both orientations on an axis coordinate, outward otherwise
    return (1, -1) if c == 0 else ((1,) if c > 0 else (-1,))


def build_lattice(radius: int, orientation: str = "undirected", h: int | None = None) -> Graph:
    """Planar lattice truncated to the l1-ball of the given radius.

    ``orientation``:
    - ``"undirected"``: the four nearest neighbors.
    - ``"outward"``: each vertex reads only the neighbors one step farther from
      the origin; a zero coordinate reads both directions along that axis.
    - ``"perturbed"``: the outward lattice with the edges on the column x = -1
      reversed, except that (-1, h) keeps reading (-2, h) and is still read by
      (0, h).  This creates a long detour: (-1, 1) sits at distance 2h from the
      origin while (-1, 0) is a direct neighbor of both.  Needs radius >= h + 1
      for the detour to exist inside the truncation.
    """
    if radius < 1:
        raise ValueError("lattice radius must be >= 1")
    if orientation not in ("undirected", "outward", "perturbed"):
        raise ValueError(f"unknown orientation {orientation!r}")
    if orientation == "perturbed":
        if h is None or not 1 <= h <= radius:
            raise ValueError("perturbed orientation needs 1 <= h <= radius")

    pts = spiral_points(radius)
    index = {p: i for i, p in enumerate(pts)}
    nbrs: list[set[tuple[int, int]]] = []
    for x, y in pts:
        if orientation == "undirected":
            cand = {(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)}
        else:
            cand = {(x + s, y) for s in _signs(x)} | {(x, y + s) for s in _signs(y)}
        nbrs.append({p for p in cand if p in index})

    if orientation == "perturbed":
        for b in range(1, radius):
            v = (-1, b)
            if v not in index:
                break
            horiz = (-2, b) if b == h else (0, b)
            nbrs[index[v]] = {p for p in (horiz, (-1, b - 1)) if p in index}
            nbrs[index[(-1, b - 1)]].discard(v)
            if b != h:
                nbrs[index[(0, b)]].discard(v)

    return Graph.from_lists([[index[p] for p in s] for s in nbrs], labels=pts)


def build_tree(branching: int, depth: int) -> Graph:
    """Complete rooted tree, vertices numbered breadth-first from the root."""
    if branching < 1 or depth < 0:
        raise ValueError("tree needs branching >= 1 and depth >= 0")
    adj: list[list[int]] = [[]]
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for parent in frontier:
            for _ in range(branching):
                child = len(adj)
                adj.append([parent])
                adj[parent].append(child)
                nxt.append(child)
        frontier = nxt
    return Graph.from_lists(adj)


def degrees(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """In-degrees ``n_i = #N_i`` and out-degrees ``#{j : i in N_j}``."""
    n_in = np.array([len(x) for x in g.in_neighbors], dtype=int)
    n_out = np.zeros(g.n, dtype=int)
    for nbrs in g.in_neighbors:
        for j in nbrs:
            n_out[j] += 1
    return n_in, n_out


# ----------------------------------------------------------------------------
# layer table
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class NkhTable:
    root: int
    layers: tuple[tuple[int, ...], ...]
    counts: dict = field(repr=False)
    layer_of: dict = field(repr=False)
    sup: np.ndarray = field(repr=False)

    @property
    def h_star(self) -> int:
        """First empty layer index."""
        return len(self.layers)

    def count(self, k: int, h: int) -> int:
        return self.counts.get((k, h), 0)

    def sup_count(self, ell: int, h: int) -> int:
        """``max_{k in layer ell} N_k^h``; zero over empty layers or out of range."""
        if 0 <= ell < self.sup.shape[0] and 0 <= h < self.sup.shape[1]:
            return int(self.sup[ell, h])
        return 0

    def ball(self, radius: int) -> list[int]:
        """Vertices at distance strictly less than ``radius``."""
        return sorted(v for layer in self.layers[:radius] for v in layer)

    def max_count(self) -> int:
        return max(self.counts.values(), default=0)


def nkh_table(g: Graph, root: int) -> NkhTable:
    if not 0 <= root < g.n:
        raise ValueError(f"root {root} out of range for {g.n} vertices")
    layer_of = {root: 0}
    layers = [(root,)]
    while True:
        nxt = {j for i in layers[-1] for j in g.in_neighbors[i] if j not in layer_of}
        if not nxt:
            break
        for j in nxt:
            layer_of[j] = len(layers)
        layers.append(tuple(sorted(nxt)))

    counts: Counter = Counter()
    for h, layer in enumerate(layers):
        for j in layer:
            for k in g.in_neighbors[j]:
                counts[(k, h)] += 1

    h_star = len(layers)
    sup = np.zeros((h_star + 1, h_star), dtype=int)
    for (k, h), c in counts.items():
        ell = layer_of[k]
        sup[ell, h] = max(sup[ell, h], c)
    return NkhTable(root, tuple(layers), dict(counts), layer_of, sup)


def graph_distances(g: Graph, root: int) -> dict[int, int]:
    return dict(nkh_table(g, root).layer_of)
