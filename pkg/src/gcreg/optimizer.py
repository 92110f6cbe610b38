"""Blocked move-making optimization and the coarse-to-fine driver.

One sweep visits the base block grid and then the half-shifted grid; within a
grid all red blocks are processed, then all black blocks. Same-coloured blocks
of one grid are never face-adjacent, so none of them writes a voxel that
another one reads, and they can be solved concurrently with a result that does
not depend on scheduling.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numba as nb
import numpy as np

from .energy import EnergyParams, _check_pair, total_energy
from .moves import block_move, run_blocks
from .volume import (DisplacementField, Volume, build_pyramid,
                     upsample_field)

log = logging.getLogger(__name__)

_jit = {"nogil": True, "cache": True}


@dataclass(frozen=True)
class DeltaSet:
    """Candidate move vectors ``+-step * e_i``."""

    step: float = 0.5

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be > 0")

    @property
    def vectors(self) -> np.ndarray:
        """Shape (6, 3), ordered +x, -x, +y, -y, +z, -z."""
        out = np.zeros((6, 3))
        for axis in range(3):
            out[2 * axis, axis] = self.step
            out[2 * axis + 1, axis] = -self.step
        return out


@dataclass(frozen=True)
class RegistrationConfig:
    epsilon: float = 0.5
    levels: int = 6
    alpha: float = 0.1
    tolerance: float = 1e-5
    block_size: int = 16
    worker_count: int = 1
    early_termination: bool = True
    max_sweeps: int = 1000

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        EnergyParams(self.alpha)
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be >= 0")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _edges(dim: int, size: int, offset: int) -> list[int]:
    cuts = [0] + list(range(offset if offset > 0 else size, dim, size)) + [dim]
    return sorted(set(cuts))


@dataclass
class BlockGrid:
    """The block family ``B`` plus ``B_shift`` with red-black colouring.

    Attributes
    ----------
    boxes : ndarray, shape (m, 6)
        ``[z0, z1, y0, y1, x0, x1]`` half-open bounds per block.
    grid : ndarray, shape (m,)
        0 for the base grid, 1 for the shifted one.
    color : ndarray, shape (m,)
        Parity of the block index sum; 0 is red.
    """

    dims: tuple[int, int, int]
    block_size: int
    boxes: np.ndarray
    grid: np.ndarray
    color: np.ndarray

    @classmethod
    def build(cls, dims, block_size: int) -> BlockGrid:
        """Tile ``dims`` from the origin, then again shifted by ``block_size // 2``.

        Border blocks are clipped. With ``block_size == 1`` the shifted tiling
        coincides with the base one and is left out.
        """
        dims = tuple(int(d) for d in dims)
        n = int(block_size)
        offsets = [0] if n // 2 == 0 else [0, n // 2]
        boxes, grid, color = [], [], []
        for g, off in enumerate(offsets):
            ex, ey, ez = (_edges(d, n, off) for d in dims)
            for kz in range(len(ez) - 1):
                for ky in range(len(ey) - 1):
                    for kx in range(len(ex) - 1):
                        boxes.append((ez[kz], ez[kz + 1], ey[ky], ey[ky + 1],
                                      ex[kx], ex[kx + 1]))
                        grid.append(g)
                        color.append((kx + ky + kz) % 2)
        return cls(dims, n, np.array(boxes, np.int64), np.array(grid, np.int8),
                   np.array(color, np.int8))

    @classmethod
    def single(cls, dims) -> BlockGrid:
        """One block covering the whole volume (plain expansion moves)."""
        nx, ny, nz = (int(d) for d in dims)
        return cls((nx, ny, nz), max(nx, ny, nz),
                   np.array([[0, nz, 0, ny, 0, nx]], np.int64),
                   np.zeros(1, np.int8), np.zeros(1, np.int8))

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def phases(self) -> list[np.ndarray]:
        """Block ids per phase: base red, base black, shifted red, shifted black."""
        out = []
        for g in (0, 1):
            for c in (0, 1):
                ids = np.flatnonzero((self.grid == g) & (self.color == c))
                if len(ids):
                    out.append(ids)
        return out


@nb.njit(**_jit)
def _mark_dependents(nz, ny, nx, boxes, changed, dirty):
    """Flag every block that has a changed block inside its one-voxel
    6-neighbourhood rim (or overlapping it)."""
    # summed-area table of the 6-dilated changed regions
    sat = np.zeros((nz + 1, ny + 1, nx + 1), np.int32)
    for a in range(changed.shape[0]):
        b = boxes[changed[a]]
        for axis in range(3):
            z0, z1, y0, y1, x0, x1 = b[0], b[1], b[2], b[3], b[4], b[5]
            if axis == 0:
                z0 = max(z0 - 1, 0)
                z1 = min(z1 + 1, nz)
            elif axis == 1:
                y0 = max(y0 - 1, 0)
                y1 = min(y1 + 1, ny)
            else:
                x0 = max(x0 - 1, 0)
                x1 = min(x1 + 1, nx)
            for k in range(z0, z1):
                for j in range(y0, y1):
                    for i in range(x0, x1):
                        sat[k + 1, j + 1, i + 1] = 1
    for k in range(1, nz + 1):
        for j in range(1, ny + 1):
            for i in range(1, nx + 1):
                sat[k, j, i] += (sat[k - 1, j, i] + sat[k, j - 1, i] + sat[k, j, i - 1]
                                 - sat[k - 1, j - 1, i] - sat[k - 1, j, i - 1]
                                 - sat[k, j - 1, i - 1] + sat[k - 1, j - 1, i - 1])
    for b in range(boxes.shape[0]):
        z0, z1, y0, y1, x0, x1 = (boxes[b, 0], boxes[b, 1], boxes[b, 2],
                                  boxes[b, 3], boxes[b, 4], boxes[b, 5])
        s = (sat[z1, y1, x1] - sat[z0, y1, x1] - sat[z1, y0, x1] - sat[z1, y1, x0]
             + sat[z0, y0, x1] + sat[z0, y1, x0] + sat[z1, y0, x0] - sat[z0, y0, x0])
        if s > 0:
            dirty[b] = True


@dataclass
class SweepState:
    """Early-termination bookkeeping.

    A block is clean when its last evaluation accepted no move and no block
    overlapping its read set has changed since.
    """

    dirty: np.ndarray

    @classmethod
    def fresh(cls, blocks: BlockGrid) -> SweepState:
        return cls(np.ones(len(blocks), bool))

    def record(self, blocks: BlockGrid, ids: np.ndarray, accepted: np.ndarray):
        self.dirty[ids] = accepted > 0
        changed = ids[accepted > 0]
        if len(changed):
            nx, ny, nz = blocks.dims
            _mark_dependents(nz, ny, nx, blocks.boxes, changed, self.dirty)


@dataclass
class ProgressEvent:
    level: int
    sweep: int
    energy: float
    accepted: int
    evaluated: int
    skipped: int
    elapsed: float


@dataclass
class MoveEvent:
    """Passed to ``on_move`` after each accepted move; ``field`` is the
    field being optimized, already updated."""

    level: int
    sweep: int
    block: int
    box: np.ndarray
    delta: np.ndarray
    energy_delta: float
    field: DisplacementField


@dataclass
class LevelReport:
    level: int
    dims: tuple[int, int, int]
    initial_energy: float
    final_energy: float
    sweeps: int
    converged: bool
    moves_accepted: int
    blocks_evaluated: int
    blocks_skipped: int
    wall_time: float
    energy_trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    levels: list[LevelReport]
    wall_time: float

    @property
    def final_energy(self) -> float:
        return self.levels[-1].final_energy

    @property
    def moves_accepted(self) -> int:
        return sum(r.moves_accepted for r in self.levels)

    def to_dict(self) -> dict:
        return {"wall_time": self.wall_time, "final_energy": self.final_energy,
                "levels": [r.to_dict() for r in self.levels]}


def _run_phase(Td, Sd, u, boxes, deltas, cfg, pool):
    accepted = np.zeros(len(boxes), np.int64)
    gain = np.zeros(len(boxes))
    if pool is None or len(boxes) < 2:
        run_blocks(Td, Sd, u, boxes, deltas, cfg.alpha, cfg.tolerance, accepted, gain)
        return accepted
    chunks = np.array_split(np.arange(len(boxes)), min(cfg.worker_count, len(boxes)))

    def work(idx):
        acc = np.zeros(len(idx), np.int64)
        g = np.zeros(len(idx))
        run_blocks(Td, Sd, u, np.ascontiguousarray(boxes[idx]), deltas,
                   cfg.alpha, cfg.tolerance, acc, g)
        return acc

    for idx, acc in zip(chunks, pool.map(work, chunks)):
        accepted[idx] = acc
    return accepted


def _run_phase_traced(Td, Sd, u, boxes, ids, deltas, cfg, level, sweep, on_move):
    accepted = np.zeros(len(boxes), np.int64)
    for b, box in enumerate(boxes):
        labels = np.empty(int(np.prod(box[1::2] - box[::2])), np.int8)
        for delta in deltas:
            energy_delta, changed = block_move(Td, Sd, u.data, box, delta, cfg.alpha,
                                               cfg.tolerance, True, labels)
            if changed:
                accepted[b] += 1
                on_move(MoveEvent(level, sweep, int(ids[b]), box.copy(), delta.copy(),
                                  float(energy_delta), u))
    return accepted


def optimize_level(T: Volume, S: Volume, u: DisplacementField,
                   config: RegistrationConfig, *, blocks: Optional[BlockGrid] = None,
                   level: int = 0,
                   progress: Optional[Callable[[ProgressEvent], None]] = None,
                   on_move: Optional[Callable[[MoveEvent], None]] = None) -> LevelReport:
    """Run blocked expansion sweeps on one resolution until no move is accepted.

    ``u`` is updated in place. ``blocks`` defaults to the block grid of
    ``config.block_size``. ``on_move`` forces sequential processing and is
    called after every accepted move, with ``u`` already updated.
    """
    _check_pair(T, S, u)
    start = time.perf_counter()
    if blocks is None:
        blocks = BlockGrid.build(u.meta.dims, config.block_size)
    if blocks.dims != u.meta.dims:
        raise ValueError("block grid does not match the displacement field")
    Td, Sd = T.as_float64(), S.as_float64()
    deltas = DeltaSet(config.epsilon).vectors
    state = SweepState.fresh(blocks)
    phases = blocks.phases

    energy = total_energy(T, S, u, config.alpha)
    report = LevelReport(level, u.meta.dims, energy, energy, 0, False, 0, 0, 0,
                         0.0, [energy])
    pool = None
    if config.worker_count > 1 and on_move is None:
        pool = ThreadPoolExecutor(config.worker_count)
    try:
        for sweep in range(1, config.max_sweeps + 1):
            sweep_accepted = evaluated = skipped = 0
            for ids in phases:
                if config.early_termination:
                    run_ids = ids[state.dirty[ids]]
                else:
                    run_ids = ids
                skipped += len(ids) - len(run_ids)
                evaluated += len(run_ids)
                if not len(run_ids):
                    continue
                boxes = blocks.boxes[run_ids]
                if on_move is None:
                    accepted = _run_phase(Td, Sd, u.data, boxes, deltas, config, pool)
                else:
                    accepted = _run_phase_traced(Td, Sd, u, boxes, run_ids, deltas,
                                                 config, level, sweep, on_move)
                state.record(blocks, run_ids, accepted)
                sweep_accepted += int(accepted.sum())
            energy = total_energy(T, S, u, config.alpha)
            report.sweeps = sweep
            report.moves_accepted += sweep_accepted
            report.blocks_evaluated += evaluated
            report.blocks_skipped += skipped
            report.energy_trace.append(energy)
            report.final_energy = energy
            if progress is not None:
                progress(ProgressEvent(level, sweep, energy, sweep_accepted,
                                       evaluated, skipped,
                                       time.perf_counter() - start))
            if sweep_accepted == 0:
                report.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if not report.converged:
        log.warning("level %d did not converge within %d sweeps", level,
                    config.max_sweeps)
    report.wall_time = time.perf_counter() - start
    return report


def direct_alpha_expansion(T: Volume, S: Volume, u: DisplacementField,
                           config: RegistrationConfig, **kwargs) -> LevelReport:
    """:func:`optimize_level` with a single block spanning the whole volume."""
    return optimize_level(T, S, u, config, blocks=BlockGrid.single(u.meta.dims),
                          **kwargs)


def register(T: Volume, S: Volume, config: RegistrationConfig | None = None, *,
             initial: Optional[DisplacementField] = None, direct: bool = False,
             progress: Optional[Callable[[ProgressEvent], None]] = None,
             on_move: Optional[Callable[[MoveEvent], None]] = None,
             ) -> tuple[DisplacementField, RunReport]:
    """Coarse-to-fine registration of source ``S`` onto target ``T``.

    Both images are reduced to ``config.levels`` pyramid levels. Optimization
    starts from a zero field at the coarsest level; an ``initial`` field
    instead starts at the level whose grid it matches. Each result is
    upsampled as the starting guess for the next finer level. ``progress``
    and ``on_move`` are forwarded to :func:`optimize_level`.
    """
    config = config or RegistrationConfig()
    if T.channels != S.channels:
        raise ValueError(
            f"channel mismatch: target has {T.channels}, source {S.channels}")
    start = time.perf_counter()
    t_pyr = build_pyramid(T, config.levels)
    s_pyr = build_pyramid(S, config.levels)

    top = config.levels - 1
    if initial is not None:
        matches = [l for l, v in enumerate(t_pyr) if v.meta.dims == initial.meta.dims]
        if not matches:
            raise ValueError("initial field does not match any pyramid level")
        top = matches[0]
        u = DisplacementField(t_pyr[top].meta, initial.data.copy())
    else:
        u = DisplacementField.zeros(t_pyr[top].meta)

    reports = []
    for level in range(top, -1, -1):
        if level != top:
            u = upsample_field(u, t_pyr[level].meta)
        blocks = (BlockGrid.single(u.meta.dims) if direct
                  else BlockGrid.build(u.meta.dims, config.block_size))
        rep = optimize_level(t_pyr[level], s_pyr[level], u, config, blocks=blocks,
                             level=level, progress=progress, on_move=on_move)
        log.info("level %d %s: energy %.6g after %d sweeps (%.2fs)", level,
                 rep.dims, rep.final_energy, rep.sweeps, rep.wall_time)
        reports.append(rep)
    return u, RunReport(reports, time.perf_counter() - start)
