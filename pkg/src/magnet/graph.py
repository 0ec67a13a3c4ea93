"""k-nearest-neighbour spatial graphs over bin centers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import read_table, write_table
from .errors import InvalidArgumentError, InvalidDataError


@dataclass(frozen=True)
class SpatialGraph:
    """Directed neighbour lists; ``neighbors[i]`` are the nodes that ``i`` attends to.

    Lists are ordered by ascending edge weight (Euclidean distance), then node id.
    """

    n_nodes: int
    k: int
    neighbors: tuple[np.ndarray, ...]
    edge_weights: tuple[np.ndarray, ...]
    symmetric: bool = False

    def padded(self, self_loop: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Rectangular ``(index, mask)`` arrays; slot 0 holds the node itself when ``self_loop``."""
        lists = [np.concatenate([[i], nb]) if self_loop else nb for i, nb in enumerate(self.neighbors)]
        width = max(1, max(len(x) for x in lists))
        index = np.zeros((self.n_nodes, width), dtype=np.intp)
        mask = np.zeros((self.n_nodes, width), dtype=bool)
        for i, nb in enumerate(lists):
            index[i, : len(nb)] = nb
            index[i, len(nb):] = i
            mask[i, : len(nb)] = True
        return index, mask

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = np.concatenate([np.full(len(nb), i) for i, nb in enumerate(self.neighbors)]).astype(np.int64)
        dst = np.concatenate(self.neighbors).astype(np.int64)
        w = np.concatenate(self.edge_weights)
        return src, dst, w

    def permuted(self, perm: np.ndarray) -> "SpatialGraph":
        """Relabel so that new node ``p`` is old node ``perm[p]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return SpatialGraph(
            self.n_nodes, self.k,
            tuple(inv[self.neighbors[old]] for old in perm),
            tuple(self.edge_weights[old] for old in perm),
            self.symmetric,
        )


def build_knn_graph(coords, k: int, symmetrize: bool = False) -> SpatialGraph:
    """Connect each node to its ``k`` nearest others (ties broken by lower id)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InvalidArgumentError(f"coords must be [n x 2], got {coords.shape}")
    n = len(coords)
    if n < 2:
        raise InvalidArgumentError("a spatial graph needs at least 2 nodes")
    if k < 1:
        raise InvalidArgumentError("k must be at least 1")
    if not np.all(np.isfinite(coords)):
        raise InvalidDataError("coordinates contain non-finite values")
    kk = min(k, n - 1)
    neighbors, weights = [], []
    ids = np.arange(n)
    for i in range(n):
        dx = coords[:, 0] - coords[i, 0]
        dy = coords[:, 1] - coords[i, 1]
        dist = np.sqrt(dx * dx + dy * dy)
        dist[i] = np.inf
        if kk < n - 1:
            cutoff = np.partition(dist, kk - 1)[kk - 1]
            cand = ids[dist <= cutoff]
        else:
            cand = ids[ids != i]
        nb = cand[np.lexsort((cand, dist[cand]))][:kk]
        neighbors.append(nb)
        weights.append(dist[nb])
    if symmetrize:
        sets = [set(nb.tolist()) for nb in neighbors]
        for i, nb in enumerate(neighbors):
            for j in nb:
                sets[int(j)].add(i)
        neighbors, weights = [], []
        for i, s in enumerate(sets):
            cand = np.array(sorted(s), dtype=np.intp)
            dx = coords[cand, 0] - coords[i, 0]
            dy = coords[cand, 1] - coords[i, 1]
            d = np.sqrt(dx * dx + dy * dy)
            order = np.lexsort((cand, d))
            neighbors.append(cand[order])
            weights.append(d[order])
    return SpatialGraph(n, k, tuple(np.asarray(nb, dtype=np.intp) for nb in neighbors),
                        tuple(weights), symmetric=symmetrize)


def write_graph_csv(graph: SpatialGraph, path: Path, node_ids: Sequence[int] | None = None) -> None:
    """Write ``(src, dst, weight)`` rows; ``node_ids`` maps node positions to bin indices."""
    src, dst, w = graph.edges()
    ids = np.arange(graph.n_nodes) if node_ids is None else np.asarray(node_ids)
    write_table(Path(path), ["src", "dst", "weight"],
                ([int(ids[s]), int(ids[d]), float(x)] for s, d, x in zip(src, dst, w)))


def read_graph_csv(path: Path, node_ids: Sequence[int] | None = None, k: int | None = None) -> SpatialGraph:
    header, table = read_table(Path(path))
    if header != ["src", "dst", "weight"]:
        raise InvalidDataError(f"{Path(path).name}: expected columns src,dst,weight")
    ids = None if node_ids is None else np.asarray(node_ids)
    n = int(table[:, :2].max()) + 1 if ids is None else len(ids)
    lookup = {int(b): p for p, b in enumerate(ids)} if ids is not None else None
    nbrs: list[list[int]] = [[] for _ in range(n)]
    wts: list[list[float]] = [[] for _ in range(n)]
    for s, d, w in table:
        s, d = int(s), int(d)
        if lookup is not None:
            if s not in lookup or d not in lookup:
                raise InvalidDataError(f"{Path(path).name}: edge ({s},{d}) references an unknown bin")
            s, d = lookup[s], lookup[d]
        nbrs[s].append(d)
        wts[s].append(w)
    kk = k if k is not None else max(len(x) for x in nbrs)
    return SpatialGraph(n, kk, tuple(np.array(x, dtype=np.intp) for x in nbrs),
                        tuple(np.array(x) for x in wts))
