"""Registration quality measures and QA renderings."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .volume import DisplacementField, Volume, compose

#: Default checkerboard tile edge in pixels.
DEFAULT_TILE = 16


@dataclass
class EvalReport:
    final_energy: float
    vme: float | None = None
    wall_time: list[float] = field(default_factory=list)
    moves_accepted: int = 0
    blocks_skipped: int = 0

    def __post_init__(self):
        if self.final_energy < 0:
            raise ValueError("final_energy must be >= 0")
        if self.vme is not None and self.vme < 0:
            raise ValueError("vme must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def vme(forward: DisplacementField, reverse: DisplacementField) -> float:
    """Inverse-consistency vector magnitude error.

    Mean over voxels of ``|x - W_reverse(W_forward(x))|`` in voxel units.
    """
    residual = compose(reverse, forward).data
    return float(np.mean(np.linalg.norm(residual, axis=-1)))


def _normalize(img: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.zeros_like(img)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _slice(vol: np.ndarray, axis: int, index: int) -> np.ndarray:
    # vol is (nz, ny, nx); axis counts x, y, z
    return np.take(vol, index, axis=2 - axis)


def checkerboard(A: Volume, B: Volume, tile: int = DEFAULT_TILE, slice_axis: int = 2,
                 slice_index: int | None = None, channel: int = 0) -> np.ndarray:
    """RGB checkerboard of one slice: ``A`` tiles in grey, ``B`` tiles in red.

    Each volume is min-max scaled to 0..255 over its whole extent. ``slice_axis``
    is 0, 1 or 2 for x, y or z; the middle slice is used by default. Returns a
    ``(rows, cols, 3)`` uint8 array; tile ``(0, 0)`` shows ``A``.
    """
    if not A.meta.same_grid(B.meta):
        raise ValueError("checkerboard volumes must share a grid")
    if slice_axis not in (0, 1, 2):
        raise ValueError("slice_axis must be 0, 1 or 2")
    if tile < 1:
        raise ValueError("tile must be >= 1")
    extent = A.meta.dims[slice_axis]
    if slice_index is None:
        slice_index = extent // 2
    if not 0 <= slice_index < extent:
        raise IndexError(f"slice {slice_index} out of range 0..{extent - 1}")
    a_vol = A.channel(channel).astype(np.float64)
    b_vol = B.channel(channel).astype(np.float64)
    a = _normalize(_slice(a_vol, slice_axis, slice_index), a_vol.min(), a_vol.max())
    b = _normalize(_slice(b_vol, slice_axis, slice_index), b_vol.min(), b_vol.max())
    rows, cols = np.indices(a.shape)
    use_a = ((rows // tile + cols // tile) % 2) == 0
    out = np.zeros(a.shape + (3,), np.uint8)
    out[use_a] = a[use_a, None]
    out[~use_a, 0] = b[~use_a]
    return out
