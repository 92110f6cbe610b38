"""Exact s-t max-flow / min-cut for sparse graphs.

The solver is the augmenting-path scheme of Boykov and Kolmogorov: two search
trees grown from the terminals, augmentation along the path joining them and
an adoption stage that repairs the trees. Capacities are float64.

Arc storage is CSR-like: the arcs leaving node ``i`` are
``first[i]:first[i + 1]``, ``head[a]`` is the arc's end node, ``sister[a]`` the
reverse arc and ``rcap[a]`` its residual capacity. Terminal capacities are
folded into a single signed residual ``tr = cap_source - cap_sink`` after the
trivially saturating flow ``min(cap_source, cap_sink)`` is pushed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

_jit = {"nogil": True, "cache": True}

_NONE = -1
_TERMINAL = -2
_ORPHAN = -3
_INF = np.iinfo(np.int64).max


@dataclass
class FlowGraph:
    """A capacitated s-t graph.

    Parameters
    ----------
    node_count : int
    cap_source, cap_sink : ndarray, shape (node_count,)
        Terminal capacities ``s -> i`` and ``i -> t``.
    edges : ndarray of int, shape (m, 2)
        Node pairs ``(a, b)``.
    edge_caps : ndarray, shape (m, 2)
        Capacities ``a -> b`` and ``b -> a``.
    """

    node_count: int
    cap_source: np.ndarray
    cap_sink: np.ndarray
    edges: np.ndarray
    edge_caps: np.ndarray

    def __post_init__(self):
        n = int(self.node_count)
        self.node_count = n
        self.cap_source = np.asarray(self.cap_source, dtype=np.float64).reshape(n)
        self.cap_sink = np.asarray(self.cap_sink, dtype=np.float64).reshape(n)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.edge_caps = np.asarray(self.edge_caps, dtype=np.float64).reshape(-1, 2)
        if len(self.edges) != len(self.edge_caps):
            raise ValueError("edges and edge_caps differ in length")
        caps = (self.cap_source, self.cap_sink, self.edge_caps)
        if not all(np.all(np.isfinite(c)) and np.all(c >= 0) for c in caps):
            raise ValueError("capacities must be finite and non-negative")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValueError("self-loops are not allowed")

    @classmethod
    def empty(cls, node_count: int) -> FlowGraph:
        return cls(node_count, np.zeros(node_count), np.zeros(node_count),
                   np.zeros((0, 2), np.int64), np.zeros((0, 2)))

    def cut_capacity(self, side) -> float:
        """Capacity of the cut where ``side[i] == 0`` puts node i with the source."""
        side = np.asarray(side).astype(bool)
        total = self.cap_sink[~side].sum() + self.cap_source[side].sum()
        a, b = self.edges[:, 0], self.edges[:, 1]
        total += self.edge_caps[~side[a] & side[b], 0].sum()
        total += self.edge_caps[side[a] & ~side[b], 1].sum()
        return float(total)


@dataclass
class CutResult:
    """Maximum flow value and the minimum cut it certifies.

    ``side[i]`` is 0 for nodes reachable from the source in the final residual
    graph and 1 otherwise.
    """

    flow_value: float
    side: np.ndarray


@nb.njit(**_jit)
def build_csr(n, ea, eb, cap_ab, cap_ba):
    """Arc arrays ``(first, head, sister, rcap)`` for an undirected edge list.

    Arcs leaving a node keep the insertion order of their edges.
    """
    m = ea.shape[0]
    deg = np.zeros(n + 1, np.int64)
    for e in range(m):
        deg[ea[e] + 1] += 1
        deg[eb[e] + 1] += 1
    first = np.empty(n + 1, np.int64)
    first[0] = 0
    for i in range(n):
        first[i + 1] = first[i] + deg[i + 1]
    fill = first[:n].copy()
    head = np.empty(2 * m, np.int64)
    sister = np.empty(2 * m, np.int64)
    rcap = np.empty(2 * m)
    for e in range(m):
        a = ea[e]
        b = eb[e]
        i = fill[a]
        fill[a] += 1
        j = fill[b]
        fill[b] += 1
        head[i] = b
        rcap[i] = cap_ab[e]
        sister[i] = j
        head[j] = a
        rcap[j] = cap_ba[e]
        sister[j] = i
    return first, head, sister, rcap


@nb.njit(**_jit)
def bk_maxflow(first, head, sister, rcap, tr, side):
    """Run the max-flow in place on residual arrays; fill ``side`` and
    return the flow pushed through ``rcap`` and ``tr`` (excluding any constant
    already subtracted from the terminals)."""
    n = first.shape[0] - 1
    parent = np.full(n, _NONE, np.int64)
    sink_tree = np.zeros(n, np.bool_)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)

    queue = np.empty(max(n, 1), np.int64)
    in_queue = np.zeros(n, np.bool_)
    q_head = 0
    q_len = 0
    orphans = np.empty(max(n, 1), np.int64)
    o_head = 0
    o_len = 0

    for i in range(n):
        if tr[i] != 0.0:
            sink_tree[i] = tr[i] < 0.0
            parent[i] = _TERMINAL
            dist[i] = 1
            queue[(q_head + q_len) % n] = i
            q_len += 1
            in_queue[i] = True

    flow = 0.0
    time = 0
    current = -1
    while True:
        i = current
        if i != -1 and parent[i] == _NONE:
            i = -1
        if i == -1:
            while q_len > 0:
                i = queue[q_head]
                q_head = (q_head + 1) % n
                q_len -= 1
                in_queue[i] = False
                if parent[i] != _NONE:
                    break
                i = -1
            if i == -1:
                break

        # growth
        mid = -1
        if not sink_tree[i]:
            for a in range(first[i], first[i + 1]):
                if rcap[a] > 0.0:
                    j = head[a]
                    if parent[j] == _NONE:
                        sink_tree[j] = False
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[(q_head + q_len) % n] = j
                            q_len += 1
                            in_queue[j] = True
                    elif sink_tree[j]:
                        mid = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for a in range(first[i], first[i + 1]):
                if rcap[sister[a]] > 0.0:
                    j = head[a]
                    if parent[j] == _NONE:
                        sink_tree[j] = True
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[(q_head + q_len) % n] = j
                            q_len += 1
                            in_queue[j] = True
                    elif not sink_tree[j]:
                        mid = sister[a]
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if mid == -1:
            current = -1
            continue
        current = i

        # augmentation: find the bottleneck
        bottleneck = rcap[mid]
        x = head[sister[mid]]
        while True:
            a = parent[x]
            if a == _TERMINAL:
                break
            if rcap[sister[a]] < bottleneck:
                bottleneck = rcap[sister[a]]
            x = head[a]
        if tr[x] < bottleneck:
            bottleneck = tr[x]
        y = head[mid]
        while True:
            a = parent[y]
            if a == _TERMINAL:
                break
            if rcap[a] < bottleneck:
                bottleneck = rcap[a]
            y = head[a]
        if -tr[y] < bottleneck:
            bottleneck = -tr[y]

        # push flow, collecting orphans
        rcap[sister[mid]] += bottleneck
        rcap[mid] -= bottleneck
        x = head[sister[mid]]
        while True:
            a = parent[x]
            if a == _TERMINAL:
                break
            rcap[a] += bottleneck
            rcap[sister[a]] -= bottleneck
            nxt = head[a]
            if rcap[sister[a]] <= 0.0:
                parent[x] = _ORPHAN
                orphans[(o_head + o_len) % n] = x
                o_len += 1
            x = nxt
        tr[x] -= bottleneck
        if tr[x] <= 0.0:
            parent[x] = _ORPHAN
            orphans[(o_head + o_len) % n] = x
            o_len += 1
        y = head[mid]
        while True:
            a = parent[y]
            if a == _TERMINAL:
                break
            rcap[sister[a]] += bottleneck
            rcap[a] -= bottleneck
            nxt = head[a]
            if rcap[a] <= 0.0:
                parent[y] = _ORPHAN
                orphans[(o_head + o_len) % n] = y
                o_len += 1
            y = nxt
        tr[y] += bottleneck
        if tr[y] >= 0.0:
            parent[y] = _ORPHAN
            orphans[(o_head + o_len) % n] = y
            o_len += 1
        flow += bottleneck

        # adoption
        while o_len > 0:
            x = orphans[o_head]
            o_head = (o_head + 1) % n
            o_len -= 1
            in_sink = sink_tree[x]
            d_min = _INF
            a_min = _NONE
            for a0 in range(first[x], first[x + 1]):
                cap = rcap[a0] if in_sink else rcap[sister[a0]]
                if cap <= 0.0:
                    continue
                j = head[a0]
                if parent[j] == _NONE or sink_tree[j] != in_sink:
                    continue
                # distance of j to its terminal, or _INF if j hangs off an orphan
                d = 0
                k = j
                while True:
                    if ts[k] == time:
                        d += dist[k]
                        break
                    a = parent[k]
                    d += 1
                    if a == _TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if a == _ORPHAN:
                        d = _INF
                        break
                    k = head[a]
                if d == _INF:
                    continue
                if d < d_min:
                    a_min = a0
                    d_min = d
                k = j
                while ts[k] != time:
                    ts[k] = time
                    dist[k] = d
                    d -= 1
                    k = head[parent[k]]
            if a_min != _NONE:
                parent[x] = a_min
                ts[x] = time
                dist[x] = d_min + 1
                continue
            for a0 in range(first[x], first[x + 1]):
                j = head[a0]
                if parent[j] == _NONE or sink_tree[j] != in_sink:
                    continue
                cap = rcap[a0] if in_sink else rcap[sister[a0]]
                if cap > 0.0 and not in_queue[j]:
                    queue[(q_head + q_len) % n] = j
                    q_len += 1
                    in_queue[j] = True
                a = parent[j]
                if a != _TERMINAL and a != _ORPHAN and head[a] == x:
                    parent[j] = _ORPHAN
                    orphans[(o_head + o_len) % n] = j
                    o_len += 1
            parent[x] = _NONE

    for i in range(n):
        side[i] = 0 if (parent[i] != _NONE and not sink_tree[i]) else 1
    return flow


def solve(graph: FlowGraph) -> CutResult:
    """Compute a maximum flow and the source-reachable minimum cut of ``graph``."""
    n = graph.node_count
    first, head, sister, rcap = build_csr(
        n, graph.edges[:, 0].copy(), graph.edges[:, 1].copy(),
        graph.edge_caps[:, 0].copy(), graph.edge_caps[:, 1].copy())
    base = np.minimum(graph.cap_source, graph.cap_sink)
    tr = graph.cap_source - graph.cap_sink
    side = np.empty(n, np.int8)
    flow = bk_maxflow(first, head, sister, rcap, tr, side)
    return CutResult(float(base.sum() + flow), side)
