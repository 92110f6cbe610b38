"""Seeded synthetic image pairs with known deformations.

The source image mimics a body scan: a bright ellipsoidal body holding blobs
and fine texture sits in a nearly flat background. A linear ramp along x
spans the whole volume, so a shift along x stays visible in the background.
Deformations are a few localized Gaussian bumps inside the body.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume import DisplacementField, GridMeta, Volume, warp

KINDS = ("constant-shift", "smooth-warp", "two-channel-blob")

INTENSITY_SCALE = 8.5
BODY_SEMI_AXIS = 0.35       # body ellipsoid semi-axes as a fraction of each dimension
BLOB_COUNT = 6
BLOB_AMPLITUDE = 0.6
TEXTURE_AMPLITUDE = 0.1
TEXTURE_SIGMA = 2.0 / 32    # texture correlation length as a fraction of the volume
BACKGROUND_TEXTURE = 0.3    # texture strength outside the body relative to inside
BUMP_COUNT = 3
BUMP_WIDTH = 0.15


def _grid(dims):
    nx, ny, nz = dims
    return np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")


def _channel(rng, dims, z, y, x, body):
    nx = dims[0]
    ramp = 0.1 + 0.2 * x / max(nx - 1, 1)
    blobs = np.zeros(body.shape)
    for _ in range(BLOB_COUNT):
        c = rng.uniform(0.2, 0.8, 3) * (np.array(dims) - 1)
        r = rng.uniform(0.1, 0.25) * min(dims)
        a = BLOB_AMPLITUDE * rng.uniform(0.5, 1.0)
        d = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)
        blobs += a / (1.0 + np.exp(d - r))
    tex = ndimage.gaussian_filter(rng.normal(size=body.shape),
                                  TEXTURE_SIGMA * min(dims), mode="wrap")
    std = tex.std()
    if std > 0:
        tex /= std
    tex_weight = body + BACKGROUND_TEXTURE * (1.0 - body)
    return INTENSITY_SCALE * (body * blobs + ramp + TEXTURE_AMPLITUDE * tex * tex_weight)


def source_image(rng, dims, channels: int) -> np.ndarray:
    """Array of shape (nz, ny, nx, channels); each channel draws its own blobs
    and texture."""
    z, y, x = _grid(dims)
    nx, ny, nz = dims
    rr = np.sqrt(sum(((g - (n - 1) / 2) / (BODY_SEMI_AXIS * n)) ** 2
                     for g, n in ((x, nx), (y, ny), (z, nz))))
    body = 1.0 / (1.0 + np.exp((rr - 1.0) * min(dims) * BODY_SEMI_AXIS))
    return np.stack([_channel(rng, dims, z, y, x, body) for _ in range(channels)], axis=-1)


def smooth_field(rng, dims, amplitude: float, bumps: int = BUMP_COUNT,
                 width: float = BUMP_WIDTH) -> np.ndarray:
    """Sum of Gaussian bumps of standard deviation ``width * min(dims)`` with
    random unit directions, rescaled so the longest vector has length
    ``amplitude``."""
    z, y, x = _grid(dims)
    field = np.zeros(z.shape + (3,))
    r = width * min(dims)
    for _ in range(bumps):
        c = rng.uniform(0.3, 0.7, 3) * (np.array(dims) - 1)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        d2 = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
        field += np.exp(-0.5 * d2 / r ** 2)[..., None] * direction
    peak = np.linalg.norm(field, axis=-1).max()
    return field * (amplitude / peak) if peak > 0 else field


def make_phantom(kind: str, dims=(32, 32, 32), seed: int = 0, *,
                 shift=(2.0, 0.0, 0.0), amplitude: float = 3.0):
    """Build ``(S, T, ground_truth)`` with ``T = warp(S, ground_truth)``.

    Parameters
    ----------
    kind : {"constant-shift", "smooth-warp", "two-channel-blob"}
        ``constant-shift`` uses the constant field ``shift``. The other two
        use :func:`smooth_field` with peak length ``amplitude``;
        ``two-channel-blob`` has two independently drawn channels.
    dims : (nx, ny, nz)
    seed : int
        Seed of the only random generator used; equal arguments give
        bit-identical outputs.

    Returns
    -------
    S, T : Volume
        float32 source and target.
    ground_truth : DisplacementField
    """
    if kind not in KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}; expected one of {KINDS}")
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(seed)
    channels = 2 if kind == "two-channel-blob" else 1
    meta = GridMeta(dims, (1.0, 1.0, 1.0), channels)
    S = Volume(meta, source_image(rng, dims, channels).astype(np.float32))
    if kind == "constant-shift":
        truth = DisplacementField.constant(meta.with_channels(3), shift)
    else:
        truth = DisplacementField(meta.with_channels(3), smooth_field(rng, dims, amplitude))
    T = warp(S, truth)
    return S, Volume(T.meta, T.data.astype(np.float32)), truth
