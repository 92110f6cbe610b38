import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from gcreg.energy import total_energy
from gcreg.optimizer import (BlockGrid, DeltaSet, RegistrationConfig, SweepState,
                             direct_alpha_expansion, optimize_level, register)
from gcreg.phantom import make_phantom
from gcreg.volume import DisplacementField, GridMeta, Volume, build_pyramid, warp

import oracles


def smooth_pair(seed, dims=(10, 9, 8), channels=2):
    """Smooth random images with a known smooth warp between them."""
    rng = np.random.default_rng(seed)
    meta = GridMeta(dims, channels=channels)
    S = Volume(meta, 10 * ndimage.gaussian_filter(rng.normal(size=meta.shape), (1.5, 1.5, 1.5, 0)))
    truth = ndimage.gaussian_filter(rng.normal(size=meta.with_channels(3).shape), (3, 3, 3, 0))
    truth *= 1.5 / np.abs(truth).max()
    T = warp(S, DisplacementField(meta, truth))
    return T, S


def test_delta_set():
    v = DeltaSet(0.5).vectors
    np.testing.assert_array_equal(v, [[0.5, 0, 0], [-0.5, 0, 0], [0, 0.5, 0],
                                      [0, -0.5, 0], [0, 0, 0.5], [0, 0, -0.5]])
    with pytest.raises(ValueError):
        DeltaSet(0.0)


def test_config_defaults_and_validation():
    cfg = RegistrationConfig()
    assert (cfg.epsilon, cfg.levels, cfg.alpha, cfg.tolerance, cfg.block_size) == \
        (0.5, 6, 0.1, 1e-5, 16)
    for bad in ({"epsilon": 0}, {"levels": 0}, {"alpha": 2}, {"tolerance": -1},
                {"block_size": 0}, {"worker_count": 0}, {"max_sweeps": 0}):
        with pytest.raises(ValueError):
            RegistrationConfig(**bad)


def voxel_owner_counts(blocks, grid_id):
    nx, ny, nz = blocks.dims
    count = np.zeros((nz, ny, nx), int)
    for box in blocks.boxes[blocks.grid == grid_id]:
        count[box[0]:box[1], box[2]:box[3], box[4]:box[5]] += 1
    return count


def boxes_adjacent(a, b):
    # boxes touch along a face: overlapping in two axes and abutting in the third
    overlap = [max(a[2 * i], b[2 * i]) < min(a[2 * i + 1], b[2 * i + 1]) for i in range(3)]
    touch = [a[2 * i + 1] == b[2 * i] or b[2 * i + 1] == a[2 * i] for i in range(3)]
    return any(touch[i] and overlap[(i + 1) % 3] and overlap[(i + 2) % 3] for i in range(3))


@pytest.mark.parametrize("dims,n", [((16, 16, 16), 8), ((13, 7, 10), 4), ((5, 6, 7), 1),
                                    ((9, 9, 9), 16), ((20, 11, 3), 5)])
def test_block_grid_structure(dims, n):
    blocks = BlockGrid.build(dims, n)
    assert (voxel_owner_counts(blocks, 0) == 1).all()
    if n == 1:
        assert (blocks.grid == 0).all()
    else:
        assert voxel_owner_counts(blocks, 1).max() <= 1
        shifted = blocks.boxes[blocks.grid == 1]
        assert shifted[:, 0::2].max() > 0
    for g in (0, 1):
        for c in (0, 1):
            same = blocks.boxes[(blocks.grid == g) & (blocks.color == c)]
            for a, b in itertools.combinations(same, 2):
                assert not boxes_adjacent(a, b)
    extents = blocks.boxes[:, 1::2] - blocks.boxes[:, ::2]
    assert extents.min() >= 1 and extents.max() <= n
    phases = blocks.phases
    assert np.concatenate(phases).tolist() == sorted(
        range(len(blocks)), key=lambda i: (blocks.grid[i], blocks.color[i], i))


def test_block_grid_shift_offset():
    blocks = BlockGrid.build((16, 16, 16), 8)
    shifted = blocks.boxes[blocks.grid == 1]
    assert sorted(set(shifted[:, 0])) == [0, 4, 12]
    assert len(blocks.boxes[blocks.grid == 0]) == 8 and len(shifted) == 27


def dependents_oracle(blocks, changed):
    nx, ny, nz = blocks.dims
    region = np.zeros((nz, ny, nx), bool)
    for a in changed:
        z0, z1, y0, y1, x0, x1 = blocks.boxes[a]
        region[z0:z1, y0:y1, x0:x1] = True
    # a block is affected when its read set (box plus one-voxel 6-rim) meets a changed box
    hit = []
    for box in blocks.boxes:
        z0, z1, y0, y1, x0, x1 = box
        gamma = np.zeros_like(region)
        gamma[z0:z1, y0:y1, x0:x1] = True
        gamma = ndimage.binary_dilation(gamma, ndimage.generate_binary_structure(3, 1))
        hit.append(bool((gamma & region).any()))
    return np.array(hit)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_dependency_marking(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(3, 14, 3))
    blocks = BlockGrid.build(dims, int(rng.integers(1, 6)))
    ids = np.flatnonzero(rng.random(len(blocks)) < 0.5)
    accepted = rng.integers(0, 2, len(ids))
    state = SweepState(np.zeros(len(blocks), bool))
    state.record(blocks, ids, accepted)
    expected = np.zeros(len(blocks), bool)
    expected[ids] = accepted > 0
    expected |= dependents_oracle(blocks, ids[accepted > 0])
    np.testing.assert_array_equal(state.dirty, expected)


def test_identical_images_no_moves():
    T, _ = smooth_pair(0)
    u = DisplacementField.zeros(T.meta)
    rep = optimize_level(T, T, u, RegistrationConfig(block_size=4))
    assert rep.converged and rep.moves_accepted == 0 and rep.final_energy == 0.0
    field, run = register(T, T, RegistrationConfig(block_size=4, levels=3))
    assert not field.data.any() and run.moves_accepted == 0


def test_block_size_one_matches_icm_oracle():
    T, S = smooth_pair(1, dims=(9, 8, 7))
    cfg = RegistrationConfig(block_size=1)
    u = DisplacementField.zeros(T.meta)
    rep = optimize_level(T, S, u, cfg)
    ref = np.zeros(u.data.shape)
    sweeps = oracles.icm(T.data, S.data, ref, cfg.alpha, DeltaSet(cfg.epsilon).vectors,
                         cfg.tolerance)
    assert rep.moves_accepted > 0
    assert rep.sweeps == sweeps
    np.testing.assert_array_equal(u.data, ref)


def test_energy_strictly_decreasing_and_local_delta_exact():
    T, S = smooth_pair(2)
    cfg = RegistrationConfig(block_size=4)
    u = DisplacementField.zeros(T.meta)
    trace = [total_energy(T, S, u, cfg.alpha)]
    deltas = []

    def on_move(event):
        deltas.append(event.energy_delta)
        trace.append(total_energy(T, S, u, cfg.alpha))

    rep = optimize_level(T, S, u, cfg, on_move=on_move)
    assert rep.moves_accepted == len(deltas) > 0
    diffs = np.diff(trace)
    np.testing.assert_allclose(deltas, diffs, rtol=1e-9, atol=1e-9 * trace[0])
    assert (diffs < -cfg.tolerance).all()
    assert all(a > b for a, b in zip(rep.energy_trace, rep.energy_trace[1:-1]))


def test_traced_and_batched_runs_agree():
    T, S = smooth_pair(3)
    cfg = RegistrationConfig(block_size=4)
    a, b = DisplacementField.zeros(T.meta), DisplacementField.zeros(T.meta)
    optimize_level(T, S, a, cfg)
    optimize_level(T, S, b, cfg, on_move=lambda e: None)
    np.testing.assert_array_equal(a.data, b.data)


def test_converged_field_is_local_optimum():
    T, S = smooth_pair(4)
    cfg = RegistrationConfig(block_size=4)
    u = DisplacementField.zeros(T.meta)
    optimize_level(T, S, u, cfg)
    again = optimize_level(T, S, u, cfg)
    assert again.moves_accepted == 0 and again.sweeps == 1


def test_early_termination_exact():
    T, S = smooth_pair(5, dims=(16, 16, 16))
    on, off = DisplacementField.zeros(T.meta), DisplacementField.zeros(T.meta)
    r_on = optimize_level(T, S, on, RegistrationConfig(block_size=4))
    r_off = optimize_level(T, S, off, RegistrationConfig(block_size=4, early_termination=False))
    np.testing.assert_array_equal(on.data, off.data)
    assert r_on.blocks_evaluated < r_off.blocks_evaluated
    assert r_off.blocks_skipped == 0


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_parallel_determinism(workers):
    T, S = smooth_pair(6, dims=(16, 12, 10))
    ref = DisplacementField.zeros(T.meta)
    optimize_level(T, S, ref, RegistrationConfig(block_size=4))
    u = DisplacementField.zeros(T.meta)
    optimize_level(T, S, u, RegistrationConfig(block_size=4, worker_count=workers))
    np.testing.assert_array_equal(u.data, ref.data)


def test_single_block_equals_direct():
    T, S = smooth_pair(7, dims=(8, 8, 8))
    cfg = RegistrationConfig()
    a, b = DisplacementField.zeros(T.meta), DisplacementField.zeros(T.meta)
    ra = direct_alpha_expansion(T, S, a, cfg)
    rb = optimize_level(T, S, b, cfg, blocks=BlockGrid.single(T.meta.dims))
    np.testing.assert_array_equal(a.data, b.data)
    assert ra.energy_trace == rb.energy_trace
    assert direct_alpha_expansion(T, T, DisplacementField.zeros(T.meta), cfg).moves_accepted == 0


def test_direct_and_blocked_close_on_small_instance():
    T, S = smooth_pair(8, dims=(8, 8, 8))
    cfg = RegistrationConfig(block_size=8)
    a, b = DisplacementField.zeros(T.meta), DisplacementField.zeros(T.meta)
    fd = direct_alpha_expansion(T, S, a, cfg).final_energy
    fb = optimize_level(T, S, b, cfg).final_energy
    assert abs(fd - fb) / fd < 0.05


def test_max_sweeps_reports_non_convergence(caplog):
    T, S = smooth_pair(9)
    with caplog.at_level(logging.WARNING):
        rep = optimize_level(T, S, DisplacementField.zeros(T.meta),
                             RegistrationConfig(block_size=4, max_sweeps=1))
    assert not rep.converged and rep.sweeps == 1
    assert "did not converge" in caplog.text


def test_progress_callback():
    T, S = smooth_pair(10)
    events = []
    rep = optimize_level(T, S, DisplacementField.zeros(T.meta), RegistrationConfig(block_size=4),
                         progress=events.append)
    assert [e.sweep for e in events] == list(range(1, rep.sweeps + 1))
    assert events[-1].accepted == 0
    assert [e.energy for e in events] == rep.energy_trace[1:]


def test_level_grid_mismatch():
    T, S = smooth_pair(11)
    with pytest.raises(ValueError):
        optimize_level(T, S, DisplacementField.zeros(T.meta), RegistrationConfig(),
                       blocks=BlockGrid.build((4, 4, 4), 2))


def test_register_levels_and_errors():
    T, S = smooth_pair(12, dims=(16, 16, 16))
    u, rep = register(T, S, RegistrationConfig(block_size=4, levels=3))
    assert [r.dims for r in rep.levels] == [(4, 4, 4), (8, 8, 8), (16, 16, 16)]
    assert rep.final_energy == total_energy(T, S, u, 0.1)
    assert rep.final_energy < total_energy(T, S, DisplacementField.zeros(T.meta), 0.1)
    with pytest.raises(ValueError, match="at most"):
        register(T, S, RegistrationConfig(levels=7))
    with pytest.raises(ValueError, match="channel"):
        register(T, Volume(GridMeta((16, 16, 16)), np.zeros((16, 16, 16, 1))), RegistrationConfig())


def test_register_initial_field_starts_at_matching_level():
    T, S = smooth_pair(13, dims=(16, 16, 16))
    cfg = RegistrationConfig(block_size=4, levels=3)
    u, rep = register(T, S, cfg)
    # handing the finest result back in starts and ends at the finest level
    again, rep2 = register(T, S, cfg, initial=u)
    assert len(rep2.levels) == 1 and rep2.moves_accepted == 0
    np.testing.assert_array_equal(again.data, u.data)
    # a coarse initial field is upsampled through the remaining levels
    pyr = build_pyramid(T, 3)
    coarse = DisplacementField.zeros(pyr[1].meta)
    _, rep3 = register(T, S, cfg, initial=coarse)
    assert [r.dims for r in rep3.levels] == [(8, 8, 8), (16, 16, 16)]
    with pytest.raises(ValueError, match="pyramid"):
        register(T, S, cfg, initial=DisplacementField.zeros(GridMeta((5, 5, 5))))


def test_register_constant_shift_recovered():
    S, T, truth = make_phantom("constant-shift", (24, 24, 24), seed=3)
    u, _ = register(T, S, RegistrationConfig(block_size=8, levels=3))
    interior = (slice(4, -4),) * 3
    mean_shift = u.data[interior].reshape(-1, 3).mean(0)
    assert np.abs(mean_shift - truth.data[0, 0, 0]).max() < 0.5


def test_small_blocks_match_large_blocks_faster(bench64):
    _, rep8, t8 = bench64.run(8)
    _, rep32, t32 = bench64.run(32)
    assert abs(rep8.final_energy - rep32.final_energy) / rep32.final_energy < 0.05
    assert t8 < t32
