"""Block-restricted expansion moves.

A move adds a fixed vector ``delta`` to the displacement of any subset of the
voxels in a box-shaped sub-region. Voxels outside the box keep label 0, so the
regularizer pairs that cross the box border only depend on the inside label
and are folded into that voxel's unary cost. The remaining problem is a binary
labeling with submodular pairwise terms, solved exactly by one min cut.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .energy import _alpha, _check_pair, voxel_ssd
from .maxflow import FlowGraph, bk_maxflow, build_csr
from .volume import DisplacementField, GridMeta, Volume

_jit = {"nogil": True, "cache": True}

# neighbour offsets (di, dj, dk) in x, y, z; positive directions first
_OFFSETS = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                     [-1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=np.int64)


@dataclass(frozen=True)
class SubRegion:
    """Axis-aligned voxel box ``[origin, origin + extent)`` in (x, y, z)."""

    origin: tuple[int, int, int]
    extent: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(int(c) for c in self.origin))
        object.__setattr__(self, "extent", tuple(int(c) for c in self.extent))
        if min(self.extent) < 1 or min(self.origin) < 0:
            raise ValueError(f"invalid region {self.origin} + {self.extent}")

    @classmethod
    def clipped(cls, origin, extent, meta: GridMeta) -> SubRegion:
        """Intersect a box with the grid; raises if nothing is left."""
        lo = [max(0, int(o)) for o in origin]
        hi = [min(d, int(o) + int(e)) for o, e, d in zip(origin, extent, meta.dims)]
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("region does not intersect the grid")
        return cls(tuple(lo), tuple(h - l for l, h in zip(lo, hi)))

    @classmethod
    def whole(cls, meta: GridMeta) -> SubRegion:
        return cls((0, 0, 0), meta.dims)

    @property
    def stop(self) -> tuple[int, int, int]:
        return tuple(o + e for o, e in zip(self.origin, self.extent))

    @property
    def box(self) -> np.ndarray:
        """``[z0, z1, y0, y1, x0, x1]`` half-open array bounds."""
        (x0, y0, z0), (x1, y1, z1) = self.origin, self.stop
        return np.array([z0, z1, y0, y1, x0, x1], dtype=np.int64)

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        z0, z1, y0, y1, x0, x1 = self.box
        return (slice(z0, z1), slice(y0, y1), slice(x0, x1))

    @property
    def size(self) -> int:
        return int(np.prod(self.extent))

    def contains(self, p) -> bool:
        return all(o <= c < s for o, c, s in zip(self.origin, p, self.stop))

    def check_within(self, meta: GridMeta):
        if any(s > d for s, d in zip(self.stop, meta.dims)):
            raise ValueError(f"region {self} exceeds grid {meta.dims}")

    def pair_sets(self, meta: GridMeta):
        """Interior pairs (both voxels inside) and boundary pairs (first voxel
        inside, second outside), as lists of ``((x, y, z), (x, y, z))``."""
        interior, boundary = [], []
        for z in range(self.origin[2], self.stop[2]):
            for y in range(self.origin[1], self.stop[1]):
                for x in range(self.origin[0], self.stop[0]):
                    for off in _OFFSETS:
                        w = (x + off[0], y + off[1], z + off[2])
                        if not all(0 <= c < d for c, d in zip(w, meta.dims)):
                            continue
                        if self.contains(w):
                            if off.sum() > 0:
                                interior.append(((x, y, z), w))
                        else:
                            boundary.append(((x, y, z), w))
        return interior, boundary


@dataclass
class MoveResult:
    """Outcome of one ``(region, delta)`` move.

    ``labeling`` has the region's array shape ``(ez, ey, ex)``; 1 marks voxels
    that take the move. ``energy_delta`` is ``f(u') - f(u)``.
    """

    labeling: np.ndarray
    energy_delta: float
    changed: bool


# --------------------------------------------------------------------------
# Numba kernels


@nb.njit(**_jit)
def _sqdist(ax, ay, az, bx, by, bz):
    rx = ax - bx
    ry = ay - by
    rz = az - bz
    return rx * rx + ry * ry + rz * rz


@nb.njit(**_jit)
def move_tables(T, S, u, box, delta, alpha):
    """Unary costs and pairwise edges of the move on ``box``.

    Returns ``(d0, d1, cost0, cost1, ea, eb, cap)`` where ``d0``/``d1`` are the
    weighted data costs alone, ``cost0``/``cost1`` include the folded border
    pairs and the linear parts of the interior pairs, and ``cap`` is the
    capacity of edge ``ea -> eb`` (the reverse capacity is zero).
    """
    nz, ny, nx = u.shape[0], u.shape[1], u.shape[2]
    z0, z1, y0, y1, x0, x1 = box[0], box[1], box[2], box[3], box[4], box[5]
    bz, by, bx = z1 - z0, y1 - y0, x1 - x0
    n = bx * by * bz
    dx, dy, dz = delta[0], delta[1], delta[2]
    wd = 1.0 - alpha
    d0 = np.empty(n)
    d1 = np.empty(n)
    cost0 = np.empty(n)
    cost1 = np.empty(n)
    m_max = (bx - 1) * by * bz + bx * (by - 1) * bz + bx * by * (bz - 1)
    ea = np.empty(m_max, np.int64)
    eb = np.empty(m_max, np.int64)
    cap = np.empty(m_max)
    m = 0
    for k in range(z0, z1):
        for j in range(y0, y1):
            for i in range(x0, x1):
                l = ((k - z0) * by + (j - y0)) * bx + (i - x0)
                ux = u[k, j, i, 0]
                uy = u[k, j, i, 1]
                uz = u[k, j, i, 2]
                e0 = wd * voxel_ssd(T, S, k, j, i, i + ux, j + uy, k + uz)
                e1 = wd * voxel_ssd(T, S, k, j, i, i + (ux + dx), j + (uy + dy),
                                    k + (uz + dz))
                d0[l] = e0
                d1[l] = e1
                cost0[l] = e0
                cost1[l] = e1
    for k in range(z0, z1):
        for j in range(y0, y1):
            for i in range(x0, x1):
                l = ((k - z0) * by + (j - y0)) * bx + (i - x0)
                ux = u[k, j, i, 0]
                uy = u[k, j, i, 1]
                uz = u[k, j, i, 2]
                for o in range(6):
                    ni = i + _OFFSETS[o, 0]
                    nj = j + _OFFSETS[o, 1]
                    nk = k + _OFFSETS[o, 2]
                    if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny or nk >= nz:
                        continue
                    wx = u[nk, nj, ni, 0]
                    wy = u[nk, nj, ni, 1]
                    wz = u[nk, nj, ni, 2]
                    same = alpha * _sqdist(ux, uy, uz, wx, wy, wz)
                    moved = alpha * _sqdist(ux + dx, uy + dy, uz + dz, wx, wy, wz)
                    inside = (x0 <= ni < x1) and (y0 <= nj < y1) and (z0 <= nk < z1)
                    if not inside:
                        cost0[l] += same
                        cost1[l] += moved
                    elif o < 3:
                        lw = ((nk - z0) * by + (nj - y0)) * bx + (ni - x0)
                        other = alpha * _sqdist(ux, uy, uz, wx + dx, wy + dy, wz + dz)
                        cost1[l] += moved - same
                        cost1[lw] += same - moved
                        ea[m] = l
                        eb[m] = lw
                        cap[m] = max(other + moved - 2.0 * same, 0.0)
                        m += 1
    return d0, d1, cost0, cost1, ea[:m], eb[:m], cap[:m]


@nb.njit(**_jit)
def _neumaier(acc, comp, x):
    t = acc + x
    if abs(acc) >= abs(x):
        comp += (acc - t) + x
    else:
        comp += (x - t) + acc
    return t, comp


@nb.njit(**_jit)
def _local_delta(u, box, delta, alpha, d0, d1, labels):
    """Exact ``f(u') - f(u)`` from the terms touching the box."""
    nz, ny, nx = u.shape[0], u.shape[1], u.shape[2]
    z0, z1, y0, y1, x0, x1 = box[0], box[1], box[2], box[3], box[4], box[5]
    by, bx = y1 - y0, x1 - x0
    dx, dy, dz = delta[0], delta[1], delta[2]
    acc = 0.0
    comp = 0.0
    for k in range(z0, z1):
        for j in range(y0, y1):
            for i in range(x0, x1):
                l = ((k - z0) * by + (j - y0)) * bx + (i - x0)
                lv = labels[l]
                if lv:
                    acc, comp = _neumaier(acc, comp, d1[l] - d0[l])
                ux = u[k, j, i, 0]
                uy = u[k, j, i, 1]
                uz = u[k, j, i, 2]
                vx, vy, vz = ux, uy, uz
                if lv:
                    vx = ux + dx
                    vy = uy + dy
                    vz = uz + dz
                for o in range(6):
                    ni = i + _OFFSETS[o, 0]
                    nj = j + _OFFSETS[o, 1]
                    nk = k + _OFFSETS[o, 2]
                    if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny or nk >= nz:
                        continue
                    inside = (x0 <= ni < x1) and (y0 <= nj < y1) and (z0 <= nk < z1)
                    lw = 0
                    if inside:
                        if o >= 3:
                            continue
                        lw = labels[((nk - z0) * by + (nj - y0)) * bx + (ni - x0)]
                    if not lv and not lw:
                        continue
                    ax = u[nk, nj, ni, 0]
                    ay = u[nk, nj, ni, 1]
                    az = u[nk, nj, ni, 2]
                    old = _sqdist(ux, uy, uz, ax, ay, az)
                    if lw:
                        ax = ax + dx
                        ay = ay + dy
                        az = az + dz
                    new = _sqdist(vx, vy, vz, ax, ay, az)
                    acc, comp = _neumaier(acc, comp, alpha * new - alpha * old)
    return acc + comp


@nb.njit(**_jit)
def block_move(T, S, u, box, delta, alpha, tol, apply, labels):
    """Solve one move on ``box``; fill ``labels`` and return
    ``(energy_delta, changed)``. With ``apply`` set an accepted move is
    written into ``u``."""
    d0, d1, cost0, cost1, ea, eb, cap = move_tables(T, S, u, box, delta, alpha)
    n = d0.shape[0]
    if n == 1:
        # a lone node sits in the source tree only if label 1 costs more
        labels[0] = 0 if cost1[0] - cost0[0] > 0.0 else 1
    else:
        first, head, sister, rcap = build_csr(n, ea, eb, cap, np.zeros(cap.shape[0]))
        tr = cost1 - cost0
        bk_maxflow(first, head, sister, rcap, tr, labels)
    energy_delta = _local_delta(u, box, delta, alpha, d0, d1, labels)
    changed = energy_delta + tol < 0.0
    if apply and changed:
        z0, z1, y0, y1, x0, x1 = box[0], box[1], box[2], box[3], box[4], box[5]
        by, bx = y1 - y0, x1 - x0
        for k in range(z0, z1):
            for j in range(y0, y1):
                for i in range(x0, x1):
                    if labels[((k - z0) * by + (j - y0)) * bx + (i - x0)]:
                        u[k, j, i, 0] += delta[0]
                        u[k, j, i, 1] += delta[1]
                        u[k, j, i, 2] += delta[2]
    return energy_delta, changed


@nb.njit(**_jit)
def run_blocks(T, S, u, boxes, deltas, alpha, tol, accepted, gain):
    """Visit ``boxes`` in order, trying every delta on each; accepted moves are
    applied immediately. Per-box accepted counts and summed energy deltas are
    accumulated into ``accepted`` and ``gain``."""
    for b in range(boxes.shape[0]):
        box = boxes[b]
        n = (box[1] - box[0]) * (box[3] - box[2]) * (box[5] - box[4])
        labels = np.empty(n, np.int8)
        for d in range(deltas.shape[0]):
            energy_delta, changed = block_move(T, S, u, box, deltas[d], alpha,
                                               tol, True, labels)
            if changed:
                accepted[b] += 1
                gain[b] += energy_delta


# --------------------------------------------------------------------------
# Public operations


def _prepare(T: Volume, S: Volume, u: DisplacementField, region: SubRegion, delta):
    _check_pair(T, S, u)
    region.check_within(u.meta)
    delta = np.asarray(delta, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(delta)):
        raise ValueError("delta must be finite")
    return T.as_float64(), S.as_float64(), delta


def build_move_graph(T: Volume, S: Volume, u: DisplacementField,
                     region: SubRegion, delta, params=0.1) -> FlowGraph:
    """Flow graph whose minimum cut is the best ``(region, delta)`` labeling.

    Node ``l`` is voxel ``origin + (l % ex, (l // ex) % ey, l // (ex * ey))``;
    sink-side nodes (label 1) take the move. Constant terms are dropped.
    """
    Td, Sd, delta = _prepare(T, S, u, region, delta)
    _, _, cost0, cost1, ea, eb, cap = move_tables(
        Td, Sd, u.data, region.box, delta, _alpha(params))
    tr = cost1 - cost0
    return FlowGraph(region.size, np.maximum(tr, 0.0), np.maximum(-tr, 0.0),
                     np.stack([ea, eb], axis=1),
                     np.stack([cap, np.zeros_like(cap)], axis=1))


def solve_move(T: Volume, S: Volume, u: DisplacementField, region: SubRegion,
               delta, params=0.1, tolerance: float = 1e-5) -> MoveResult:
    """Best move on ``region`` and whether it improves ``f`` by more than
    ``tolerance``. ``u`` is not modified."""
    Td, Sd, delta = _prepare(T, S, u, region, delta)
    labels = np.empty(region.size, np.int8)
    energy_delta, changed = block_move(Td, Sd, u.data, region.box, delta,
                                       _alpha(params), float(tolerance), False,
                                       labels)
    ex, ey, ez = region.extent
    return MoveResult(labels.reshape(ez, ey, ex), float(energy_delta), bool(changed))


def apply_move(u: DisplacementField, region: SubRegion, delta, labeling) -> None:
    """Add ``delta`` to ``u`` at the region voxels labelled 1."""
    region.check_within(u.meta)
    ex, ey, ez = region.extent
    mask = np.asarray(labeling).reshape(ez, ey, ex).astype(bool)
    view = u.data[region.slices]
    view[mask] += np.asarray(delta, dtype=np.float64)
