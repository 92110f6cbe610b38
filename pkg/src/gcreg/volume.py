"""Voxel-grid volumes, displacement fields and resampling.

Arrays are stored C-ordered with shape ``(nz, ny, nx, channels)`` so that the
flattened buffer runs x fastest, then y, then z, with channels interleaved.
Displacement vectors are stored as ``(ux, uy, uz)`` in voxel units of the grid
that owns the field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import ndimage

_jit = {"nogil": True, "cache": True}

#: Pyramid smoothing kernel: Gaussian with sigma 1 voxel, radius 2.
PYRAMID_SIGMA = 1.0
PYRAMID_RADIUS = 2


@dataclass(frozen=True)
class GridMeta:
    """Shape and spacing of a regular voxel grid.

    ``dims`` and ``spacing`` are given in (x, y, z) order.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    channels: int = 1

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("dims and spacing must have three entries")
        if min(dims) < 1:
            raise ValueError(f"all dims must be >= 1, got {dims}")
        if not all(math.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"all spacings must be > 0, got {spacing}")
        if int(self.channels) < 1:
            raise ValueError("channels must be >= 1")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "channels", int(self.channels))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        """Array shape ``(nz, ny, nx, channels)``."""
        nx, ny, nz = self.dims
        return (nz, ny, nx, self.channels)

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def same_grid(self, other: GridMeta) -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    def with_channels(self, channels: int) -> GridMeta:
        return GridMeta(self.dims, self.spacing, channels)


def _check_array(meta: GridMeta, data: np.ndarray, what: str) -> np.ndarray:
    data = np.asarray(data)
    if data.size != meta.voxel_count * meta.channels:
        raise ValueError(
            f"{what} data has {data.size} values, grid needs "
            f"{meta.voxel_count * meta.channels}")
    data = data.reshape(meta.shape)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{what} data contains non-finite values")
    return data


@dataclass
class Volume:
    """A multi-channel scalar image on a regular grid."""

    meta: GridMeta
    data: np.ndarray

    def __post_init__(self):
        if not np.issubdtype(np.asarray(self.data).dtype, np.floating):
            self.data = np.asarray(self.data, dtype=np.float64)
        self.data = np.ascontiguousarray(
            _check_array(self.meta, self.data, "volume"))

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0)) -> Volume:
        """Wrap an array of shape ``(nz, ny, nx)`` or ``(nz, ny, nx, c)``."""
        array = np.asarray(array)
        if array.ndim == 3:
            array = array[..., None]
        if array.ndim != 4:
            raise ValueError("expected a 3-D or 4-D array")
        nz, ny, nx, c = array.shape
        return cls(GridMeta((nx, ny, nz), spacing, c), array)

    @property
    def channels(self) -> int:
        return self.meta.channels

    def channel(self, c: int) -> np.ndarray:
        """View of one channel as a ``(nz, ny, nx)`` array."""
        return self.data[..., c]

    def as_float64(self) -> np.ndarray:
        return np.ascontiguousarray(self.data, dtype=np.float64)


@dataclass
class DisplacementField:
    """Per-voxel displacement vectors ``u``; the transform is ``W(x) = x + u(x)``."""

    meta: GridMeta
    data: np.ndarray

    def __post_init__(self):
        if self.meta.channels != 3:
            self.meta = self.meta.with_channels(3)
        self.data = np.ascontiguousarray(
            _check_array(self.meta, np.asarray(self.data, dtype=np.float64),
                         "displacement field"))

    @classmethod
    def zeros(cls, meta: GridMeta) -> DisplacementField:
        meta = meta.with_channels(3)
        return cls(meta, np.zeros(meta.shape))

    @classmethod
    def constant(cls, meta: GridMeta, vector) -> DisplacementField:
        meta = meta.with_channels(3)
        data = np.empty(meta.shape)
        data[...] = np.asarray(vector, dtype=np.float64)
        return cls(meta, data)

    def copy(self) -> DisplacementField:
        return DisplacementField(self.meta, self.data.copy())


# --------------------------------------------------------------------------
# Numba kernels


@nb.njit(**_jit)
def _interp(data, c, x, y, z):
    nz, ny, nx = data.shape[0], data.shape[1], data.shape[2]
    x = min(max(x, 0.0), nx - 1.0)
    y = min(max(y, 0.0), ny - 1.0)
    z = min(max(z, 0.0), nz - 1.0)
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    z0 = int(math.floor(z))
    x1 = min(x0 + 1, nx - 1)
    y1 = min(y0 + 1, ny - 1)
    z1 = min(z0 + 1, nz - 1)
    fx = x - x0
    fy = y - y0
    fz = z - z0
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    a00 = data[z0, y0, x0, c] * gx + data[z0, y0, x1, c] * fx
    a01 = data[z0, y1, x0, c] * gx + data[z0, y1, x1, c] * fx
    a10 = data[z1, y0, x0, c] * gx + data[z1, y0, x1, c] * fx
    a11 = data[z1, y1, x0, c] * gx + data[z1, y1, x1, c] * fx
    b0 = a00 * gy + a01 * fy
    b1 = a10 * gy + a11 * fy
    return b0 * gz + b1 * fz


@nb.njit(**_jit)
def _sample_displaced(data, disp, scale, offset_scale):
    """Sample ``data`` at ``offset_scale * v + disp(v)`` for every grid voxel v
    of ``disp``; output is multiplied by ``scale``."""
    nz, ny, nx = disp.shape[0], disp.shape[1], disp.shape[2]
    nc = data.shape[3]
    out = np.empty((nz, ny, nx, nc))
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                px = offset_scale * i + disp[k, j, i, 0]
                py = offset_scale * j + disp[k, j, i, 1]
                pz = offset_scale * k + disp[k, j, i, 2]
                for c in range(nc):
                    out[k, j, i, c] = scale * _interp(data, c, px, py, pz)
    return out


@nb.njit(**_jit)
def _compose(outer, inner):
    nz, ny, nx = inner.shape[0], inner.shape[1], inner.shape[2]
    out = np.empty_like(inner)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                ux = inner[k, j, i, 0]
                uy = inner[k, j, i, 1]
                uz = inner[k, j, i, 2]
                px = i + ux
                py = j + uy
                pz = k + uz
                out[k, j, i, 0] = ux + _interp(outer, 0, px, py, pz)
                out[k, j, i, 1] = uy + _interp(outer, 1, px, py, pz)
                out[k, j, i, 2] = uz + _interp(outer, 2, px, py, pz)
    return out


# --------------------------------------------------------------------------
# Public operations


def sample_trilinear(vol: Volume, p, channel: int = 0) -> float:
    """Trilinearly interpolate one channel of ``vol`` at ``p = (x, y, z)``.

    Coordinates outside ``[0, dim - 1]`` are clamped to the border first.
    """
    if not 0 <= channel < vol.channels:
        raise IndexError(
            f"channel {channel} out of range for {vol.channels}-channel volume")
    x, y, z = (float(c) for c in p)
    return float(_interp(vol.as_float64(), channel, x, y, z))


def warp(source: Volume, field: DisplacementField) -> Volume:
    """Resample ``source`` onto the grid of ``field`` with the backward map
    ``v -> v + u(v)``."""
    out = _sample_displaced(source.as_float64(), field.data, 1.0, 1.0)
    return Volume(field.meta.with_channels(source.channels), out)


def compose(outer: DisplacementField, inner: DisplacementField) -> DisplacementField:
    """Displacement of ``W_outer(W_inner(x))``.

    Both fields must live on the same grid.
    """
    if not outer.meta.same_grid(inner.meta):
        raise ValueError("cannot compose fields defined on different grids")
    return DisplacementField(inner.meta, _compose(outer.data, inner.data))


def gaussian_kernel(sigma: float = PYRAMID_SIGMA,
                    radius: int = PYRAMID_RADIUS) -> np.ndarray:
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (k / sigma) ** 2)


def downsampled_dims(dims) -> tuple[int, int, int]:
    return tuple((int(d) + 1) // 2 for d in dims)


def gaussian_downsample(vol: Volume) -> Volume:
    """Smooth with a border-renormalized Gaussian and keep even-index voxels.

    Output dims are ``ceil(dim / 2)`` and spacing doubles.
    """
    if min(vol.meta.dims) < 2:
        raise ValueError(
            f"cannot downsample a volume with dims {vol.meta.dims}; "
            "every dim must be >= 2")
    weights = gaussian_kernel()
    data = vol.as_float64()
    for axis in range(3):
        ones = np.ones(data.shape[axis])
        norm = ndimage.correlate1d(ones, weights, mode="constant", cval=0.0)
        data = ndimage.correlate1d(data, weights, axis=axis, mode="constant",
                                   cval=0.0)
        shape = [1, 1, 1, 1]
        shape[axis] = -1
        data = data / norm.reshape(shape)
    data = np.ascontiguousarray(data[::2, ::2, ::2])
    nz, ny, nx = data.shape[:3]
    spacing = tuple(2.0 * s for s in vol.meta.spacing)
    return Volume(GridMeta((nx, ny, nz), spacing, vol.channels), data)


def upsample_field(field: DisplacementField, target_meta: GridMeta) -> DisplacementField:
    """Trilinearly upsample a coarse field to the next finer pyramid level.

    Fine voxel ``i`` maps to coarse coordinate ``i / 2`` and vectors are
    doubled because they are expressed in voxels of the finer grid.
    """
    if downsampled_dims(target_meta.dims) != field.meta.dims:
        raise ValueError(
            f"field dims {field.meta.dims} are not the pyramid parent of "
            f"{target_meta.dims}")
    meta = target_meta.with_channels(3)
    half = np.zeros(meta.shape)
    out = _sample_displaced(field.data, half, 2.0, 0.5)
    return DisplacementField(meta, out)


def build_pyramid(vol: Volume, levels: int) -> list[Volume]:
    """Return ``levels`` volumes, finest first."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    pyramid = [vol]
    for level in range(1, levels):
        if min(pyramid[-1].meta.dims) < 2:
            raise ValueError(
                f"volume with dims {vol.meta.dims} is too small for {levels} "
                f"pyramid levels; use at most {level} levels")
        pyramid.append(gaussian_downsample(pyramid[-1]))
    return pyramid
