"""Patch-pixel graphs: hop-ring adjacencies, normalization, filtered GCN.

Patch pixels form a 4-neighborhood grid graph. The hop-n adjacency connects
pairs at exact breadth-first distance n (hop 0 is the identity), so the rings
partition node pairs and never overlap. Aggregation per hop uses either

* the adaptive edge filter: row-stochastic weights
  q_ij = softmax_{j in ring_n(i)} ( -gamma ||s_i - s_j||^2 ),
  rows without ring members all zero, Q_0 = I; or
* the symmetric normalization D^{-1/2} A D^{-1/2} when filtering is off.

A single weight matrix is shared across hops, so the parameter count does not
depend on the hop count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .tensor import Tensor, ShapeError, custom_op, matmul

__all__ = [
    "HopGraph",
    "grid_adjacency",
    "bfs_distances",
    "build_hop_graph",
    "build_grid_graph",
    "normalize_adjacency",
    "adaptive_filter",
    "gcn_forward",
    "write_filter_csv",
]


@dataclass
class HopGraph:
    """Hop-ring decomposition of a graph up to max_hop.

    ``rings[n]`` is the 0/1 adjacency of pairs at BFS distance exactly n
    (rings[0] = I). ``nbr``/``cnt`` hold the same rings 1..max_hop as padded
    neighbor lists for the kernels.
    """

    base: np.ndarray
    max_hop: int
    rings: np.ndarray            # [max_hop+1, M, M]
    nbr: np.ndarray              # [max_hop, M, K]
    cnt: np.ndarray              # [max_hop, M]
    side: int | None = None
    _norm_cache: dict = field(default_factory=dict, repr=False)

    @property
    def nodes(self) -> int:
        return self.base.shape[0]

    def normalized_ring(self, n: int) -> np.ndarray:
        """Symmetric-normalized hop-n ring (cached)."""
        if n not in self._norm_cache:
            self._norm_cache[n] = normalize_adjacency(self.rings[n])
        return self._norm_cache[n]


def grid_adjacency(side: int) -> np.ndarray:
    """4-neighborhood adjacency of a side x side pixel grid, row-major."""
    if side < 1:
        raise ValueError(f"grid side must be >= 1, got {side}")
    m = side * side
    a = np.zeros((m, m))
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                a[i, i + 1] = a[i + 1, i] = 1.0
            if r + 1 < side:
                a[i, i + side] = a[i + side, i] = 1.0
    return a


def bfs_distances(adj: np.ndarray) -> np.ndarray:
    """All-pairs shortest hop counts; -1 where unreachable."""
    adj = np.asarray(adj)
    m = adj.shape[0]
    if adj.shape != (m, m):
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    neighbors = [np.flatnonzero(adj[i] > 0) for i in range(m)]
    dist = np.full((m, m), -1, dtype=np.int64)
    for src in range(m):
        dist[src, src] = 0
        frontier = [src]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in neighbors[u]:
                    if dist[src, v] < 0:
                        dist[src, v] = d
                        nxt.append(v)
            frontier = nxt
    return dist


def build_hop_graph(adj: np.ndarray, max_hop: int, side: int | None = None) -> HopGraph:
    if max_hop < 0:
        raise ValueError(f"max_hop must be >= 0, got {max_hop}")
    adj = np.asarray(adj, dtype=np.float64)
    m = adj.shape[0]
    if adj.shape != (m, m):
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    dist = bfs_distances(adj)
    rings = np.zeros((max_hop + 1, m, m))
    rings[0] = np.eye(m)
    for n in range(1, max_hop + 1):
        rings[n] = (dist == n).astype(np.float64)
    cnt = rings[1:].sum(axis=2).astype(np.int64) if max_hop >= 1 \
        else np.zeros((0, m), dtype=np.int64)
    max_k = int(cnt.max()) if cnt.size else 0
    max_k = max(max_k, 1)
    nbr = np.full((max_hop, m, max_k), -1, dtype=np.int64)
    for n in range(1, max_hop + 1):
        for i in range(m):
            js = np.flatnonzero(rings[n, i] > 0)
            nbr[n - 1, i, :len(js)] = js
    return HopGraph(base=adj, max_hop=max_hop, rings=rings, nbr=nbr, cnt=cnt,
                    side=side)


def build_grid_graph(side: int, max_hop: int) -> HopGraph:
    return build_hop_graph(grid_adjacency(side), max_hop, side=side)


def normalize_adjacency(a: np.ndarray, add_self_loops: bool = False) -> np.ndarray:
    """Symmetric normalization D^{-1/2} (A [+ I]) D^{-1/2}.

    Requires a square, symmetric, nonnegative matrix. Isolated nodes get
    all-zero rows. The spectral radius of the result is at most 1.
    """
    a = np.asarray(a, dtype=np.float64)
    m = a.shape[0]
    if a.shape != (m, m):
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise ValueError("adjacency entries must be nonnegative")
    if not np.allclose(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if add_self_loops:
        a = a + np.eye(m)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros(m)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def adaptive_filter(features: np.ndarray, graph: HopGraph, gamma: float = 0.2) -> np.ndarray:
    """Dense reference of the per-hop edge filter.

    Returns Q [max_hop+1, M, M]: Q_0 = I; for n >= 1 row i of Q_n is the
    softmax of -gamma * squared feature distances over hop-n ring members,
    zero elsewhere and all zero when the ring row is empty. Connected rows
    sum to exactly 1 as computed.
    """
    features = np.asarray(features, dtype=np.float64)
    m = graph.nodes
    if features.shape[0] != m:
        raise ShapeError(f"features rows {features.shape[0]} != graph nodes {m}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    sq = ((features[:, None, :] - features[None, :, :]) ** 2).sum(axis=2)
    q = np.zeros_like(graph.rings)
    q[0] = np.eye(m)
    for n in range(1, graph.max_hop + 1):
        support = graph.rings[n] > 0
        for i in range(m):
            js = np.flatnonzero(support[i])
            if js.size == 0:
                continue
            logits = -gamma * sq[i, js]
            w = np.exp(logits - logits.max())
            q[n, i, js] = w / w.sum()
    return q


def _edge_filter_op(s: Tensor, graph: HopGraph, gamma: float) -> Tensor:
    """Tape node: sum over hops 1..max_hop of (Q_n S), fused kernels inside."""
    bsz, m, c = s.shape
    agg = np.zeros((bsz, m, c))
    p = np.zeros((bsz, graph.max_hop, m, graph.nbr.shape[2]))
    kernels.edge_filter_fwd(s.data, graph.nbr, graph.cnt, gamma, agg, p)

    def vjp(g):
        ds = np.zeros_like(s.data)
        kernels.edge_filter_bwd(s.data, graph.nbr, graph.cnt, p,
                                np.ascontiguousarray(g), gamma, ds)
        return (ds,)

    return custom_op(agg, (s,), vjp)


def gcn_forward(features: Tensor, graph: HopGraph, weight: Tensor,
                gamma: float = 0.2, adaptive: bool = True,
                activation: bool = True) -> Tensor:
    """Shared-weight multi-hop aggregation: phi( (sum_n P_n S) W ).

    features [M, C] or [B, M, C]; weight [C, D_out] shared across hops. P_0 = I;
    for n >= 1, P_n is the adaptive filter Q_n (differentiable through the
    features) or the symmetric-normalized ring when ``adaptive`` is off.
    phi is relu, or identity with ``activation=False``.
    """
    if features.ndim not in (2, 3):
        raise ShapeError(f"gcn_forward expects [M,C] or [B,M,C], got {features.shape}")
    single = features.ndim == 2
    if single:
        features = features.reshape(1, *features.shape)
    if features.shape[1] != graph.nodes:
        raise ShapeError(f"features nodes {features.shape[1]} != graph nodes {graph.nodes}")
    if weight.ndim != 2 or weight.shape[0] != features.shape[2]:
        raise ShapeError(f"weight shape {weight.shape} incompatible with "
                         f"feature dim {features.shape[2]}")
    agg = features  # hop 0
    if graph.max_hop >= 1:
        if adaptive:
            if gamma <= 0:
                raise ValueError("gamma must be positive")
            agg = agg + _edge_filter_op(features, graph, gamma)
        else:
            for n in range(1, graph.max_hop + 1):
                prop = Tensor(graph.normalized_ring(n))
                agg = agg + matmul(prop, features)
    out = agg @ weight
    if activation:
        out = out.relu()
    if single:
        out = out.reshape(out.shape[1], out.shape[2])
    return out


def write_filter_csv(q: np.ndarray, directory: str | Path, prefix: str = "q_hop") -> list[Path]:
    """Debug dump: one CSV per hop matrix. Returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for n in range(q.shape[0]):
        path = directory / f"{prefix}{n}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in q[n]:
                writer.writerow([repr(float(v)) for v in row])
        paths.append(path)
    return paths
