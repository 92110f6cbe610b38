"""Matching criterion ``f = (1 - alpha) D + alpha R`` and its move term tables.

``D`` is the channel-averaged sum of squared differences between the target
and the backward-warped source, ``R`` the diffusion regularizer summed over
unordered 6-neighbour pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .volume import DisplacementField, Volume, _interp

_jit = {"nogil": True, "cache": True}

#: Absolute slack allowed by :func:`check_submodular`.
SUBMODULAR_SLACK = 1e-9


@dataclass(frozen=True)
class EnergyParams:
    """Balance between data and regularization terms."""

    alpha: float = 0.1

    def __post_init__(self):
        if not 0.0 <= float(self.alpha) <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class UnaryPair:
    """Cost of a voxel keeping (``e0``) or taking (``e1``) the move."""

    e0: float
    e1: float


@dataclass(frozen=True)
class BinaryQuad:
    """Pairwise cost ``phi(L(v), L(w))`` at the four label pairs."""

    e00: float
    e01: float
    e10: float
    e11: float


def _alpha(params) -> float:
    alpha = params.alpha if isinstance(params, EnergyParams) else float(params)
    EnergyParams(alpha)
    return alpha


@nb.njit(**_jit)
def voxel_ssd(T, S, k, j, i, px, py, pz):
    """Channel-mean squared difference between ``T[k, j, i]`` and ``S`` at
    the continuous position ``(px, py, pz)``."""
    nc = T.shape[3]
    acc = 0.0
    for c in range(nc):
        r = T[k, j, i, c] - _interp(S, c, px, py, pz)
        acc += r * r
    return acc / nc


@nb.njit(**_jit)
def data_map(T, S, u):
    """Per-voxel data cost at the current displacement."""
    nz, ny, nx = T.shape[0], T.shape[1], T.shape[2]
    out = np.empty((nz, ny, nx))
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                out[k, j, i] = voxel_ssd(T, S, k, j, i,
                                         i + u[k, j, i, 0],
                                         j + u[k, j, i, 1],
                                         k + u[k, j, i, 2])
    return out


def regularization_maps(u: np.ndarray) -> list[np.ndarray]:
    """Squared vector differences over neighbour pairs along x, y and z."""
    return [np.sum(np.diff(u, axis=axis) ** 2, axis=-1) for axis in (2, 1, 0)]


def _check_pair(T: Volume, S: Volume, u: DisplacementField):
    if T.channels != S.channels:
        raise ValueError(
            f"channel mismatch: target has {T.channels}, source {S.channels}")
    if T.meta.dims != u.meta.dims:
        raise ValueError("target and displacement field grids differ")


def data_term(T: Volume, S: Volume, u: DisplacementField) -> float:
    """Sum over target voxels of the channel-mean squared difference."""
    _check_pair(T, S, u)
    return math.fsum(data_map(T.as_float64(), S.as_float64(), u.data).ravel())


def regularization_term(u: DisplacementField) -> float:
    """Sum of ``||u(v) - u(w)||^2`` over unordered 6-neighbour pairs."""
    return math.fsum(
        math.fsum(m.ravel()) for m in regularization_maps(u.data))


def total_energy(T: Volume, S: Volume, u: DisplacementField, params=0.1) -> float:
    alpha = _alpha(params)
    return (1.0 - alpha) * data_term(T, S, u) + alpha * regularization_term(u)


def unary_terms(T: Volume, S: Volume, u: DisplacementField, v, delta,
                params=0.1) -> UnaryPair:
    """Weighted data cost at voxel ``v = (x, y, z)`` without and with ``delta``."""
    _check_pair(T, S, u)
    alpha = _alpha(params)
    i, j, k = (int(c) for c in v)
    dx, dy, dz = (float(c) for c in delta)
    Td, Sd = T.as_float64(), S.as_float64()
    ux, uy, uz = u.data[k, j, i]
    e0 = voxel_ssd(Td, Sd, k, j, i, i + ux, j + uy, k + uz)
    e1 = voxel_ssd(Td, Sd, k, j, i, i + (ux + dx), j + (uy + dy), k + (uz + dz))
    return UnaryPair((1.0 - alpha) * e0, (1.0 - alpha) * e1)


def binary_terms(u: DisplacementField, v, w, delta, params=0.1) -> BinaryQuad:
    """Weighted regularizer between adjacent voxels ``v`` and ``w``.

    The first label refers to ``v``; e.g. ``e10`` is the cost when only ``v``
    takes the move.
    """
    alpha = _alpha(params)
    v = np.asarray(v, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    if np.abs(v - w).sum() != 1:
        raise ValueError(f"voxels {tuple(v)} and {tuple(w)} are not 6-adjacent")
    delta = np.asarray(delta, dtype=np.float64)
    uv = u.data[v[2], v[1], v[0]]
    uw = u.data[w[2], w[1], w[0]]
    same = alpha * float(np.sum((uv - uw) ** 2))
    return BinaryQuad(
        e00=same,
        e01=alpha * float(np.sum((uv - (uw + delta)) ** 2)),
        e10=alpha * float(np.sum(((uv + delta) - uw) ** 2)),
        # (u(v) + d) - (u(w) + d) == u(v) - u(w); keep the identity exact
        e11=same,
    )


def check_submodular(q: BinaryQuad) -> bool:
    return q.e00 + q.e11 <= q.e01 + q.e10 + SUBMODULAR_SLACK
