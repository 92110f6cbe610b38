import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcreg.energy import (BinaryQuad, EnergyParams, binary_terms, check_submodular,
                          data_term, regularization_term, total_energy, unary_terms)
from gcreg.volume import DisplacementField, GridMeta, Volume, sample_trilinear

from oracles import corner_oracle


def instance(rng, dims=(4, 4, 4), channels=2, scale=1.0):
    meta = GridMeta(dims, channels=channels)
    T = Volume(meta, rng.normal(size=meta.shape))
    S = Volume(meta, rng.normal(size=meta.shape))
    u = DisplacementField(meta.with_channels(3), scale * rng.normal(size=meta.with_channels(3).shape))
    return T, S, u


def data_oracle(T, S, u):
    nx, ny, nz = T.meta.dims
    total = 0.0
    for z, y, x in itertools.product(range(nz), range(ny), range(nx)):
        p = np.array([x, y, z]) + u.data[z, y, x]
        r = [T.data[z, y, x, c] - corner_oracle(S.data[..., c], p) for c in range(T.channels)]
        total += np.mean(np.square(r))
    return total


def pairs(dims):
    nx, ny, nz = dims
    for z, y, x in itertools.product(range(nz), range(ny), range(nx)):
        for dx, dy, dz in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
            w = (x + dx, y + dy, z + dz)
            if w[0] < nx and w[1] < ny and w[2] < nz:
                yield (x, y, z), w


def reg_oracle(u):
    return sum(float(np.sum((u.data[v[2], v[1], v[0]] - u.data[w[2], w[1], w[0]]) ** 2))
               for v, w in pairs(u.meta.dims))


def test_params_validation():
    with pytest.raises(ValueError):
        EnergyParams(1.5)
    with pytest.raises(ValueError):
        EnergyParams(-0.1)


def test_data_term_trivial():
    rng = np.random.default_rng(0)
    T, _, _ = instance(rng)
    assert data_term(T, T, DisplacementField.zeros(T.meta)) == 0.0
    one = GridMeta((1, 1, 1))
    assert data_term(Volume(one, [[[[2.0]]]]), Volume(one, [[[[5.0]]]]),
                     DisplacementField.zeros(one)) == 9.0


def test_data_term_channel_mismatch():
    rng = np.random.default_rng(1)
    T, S, u = instance(rng)
    with pytest.raises(ValueError, match="channel"):
        data_term(T, Volume(GridMeta((4, 4, 4)), np.zeros((4, 4, 4, 1))), u)


def test_data_term_matches_oracle():
    rng = np.random.default_rng(2)
    T, S, u = instance(rng)
    assert data_term(T, S, u) == pytest.approx(data_oracle(T, S, u), rel=1e-12)


def test_regularization_term():
    meta = GridMeta((2, 1, 1), channels=3)
    assert regularization_term(DisplacementField(meta, [[[[0, 0, 0], [1, 0, 0]]]])) == 1.0
    assert regularization_term(DisplacementField.constant(GridMeta((3, 3, 3)), (1, 2, 3))) == 0.0
    rng = np.random.default_rng(3)
    u = DisplacementField(GridMeta((3, 3, 3), channels=3), rng.normal(size=(3, 3, 3, 3)))
    assert regularization_term(u) == pytest.approx(reg_oracle(u), rel=1e-12)


def test_total_energy():
    rng = np.random.default_rng(4)
    T, S, u = instance(rng)
    D, R = data_oracle(T, S, u), reg_oracle(u)
    assert total_energy(T, S, u, 0.0) == pytest.approx(D, rel=1e-12)
    assert total_energy(T, S, u, 1.0) == pytest.approx(R, rel=1e-12)
    assert total_energy(T, S, u, EnergyParams(0.1)) == pytest.approx(0.9 * D + 0.1 * R, rel=1e-12)


def test_total_energy_frozen():
    # recorded from data_oracle / reg_oracle on this seed
    T, S, u = instance(np.random.default_rng(5), dims=(3, 2, 2))
    assert total_energy(T, S, u, 0.1) == pytest.approx(
        0.9 * data_oracle(T, S, u) + 0.1 * reg_oracle(u), rel=1e-12)
    assert total_energy(T, S, u, 0.1) == pytest.approx(22.841326770156748, rel=1e-12)


def test_unary_terms():
    rng = np.random.default_rng(6)
    T, S, u = instance(rng)
    q = unary_terms(T, S, u, (1, 2, 3), (0, 0, 0), 0.1)
    assert q.e0 == q.e1
    flat = Volume(T.meta, np.full(T.meta.shape, 1.5))
    q = unary_terms(flat, flat, u, (1, 2, 3), (0.5, 0, 0), 0.1)
    assert q.e0 == q.e1 == 0.0
    delta = np.array([0.0, -0.5, 0.5])
    q = unary_terms(T, S, u, (2, 1, 0), delta, 0.25)
    for e, d in ((q.e0, 0.0), (q.e1, 1.0)):
        p = np.array([2, 1, 0]) + u.data[0, 1, 2] + d * delta
        ref = np.mean([(T.data[0, 1, 2, c] - sample_trilinear(S, p, c)) ** 2 for c in range(2)])
        assert e == pytest.approx(0.75 * ref, rel=1e-12)


def test_binary_terms_examples():
    meta = GridMeta((3, 3, 3), channels=3)
    zero = DisplacementField.zeros(meta)
    q = binary_terms(zero, (0, 0, 0), (1, 0, 0), (1, 0, 0), 0.1)
    assert (q.e00, q.e11, q.e10, q.e01) == (0.0, 0.0, 0.1, 0.1)
    rng = np.random.default_rng(7)
    u = DisplacementField(meta, rng.normal(size=meta.shape))
    q = binary_terms(u, (1, 1, 1), (1, 2, 1), (0, 0, 0), 0.1)
    assert q.e00 == q.e01 == q.e10 == q.e11
    with pytest.raises(ValueError):
        binary_terms(u, (0, 0, 0), (1, 1, 0), (1, 0, 0), 0.1)


def test_check_submodular():
    assert check_submodular(BinaryQuad(0, 1, 1, 0))
    assert not check_submodular(BinaryQuad(2, 1, 1, 2))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0.01, 5))
def test_property_submodular_gap(seed, alpha, eps):
    rng = np.random.default_rng(seed)
    meta = GridMeta((3, 3, 3), channels=3)
    u = DisplacementField(meta, rng.normal(scale=3, size=meta.shape))
    v = tuple(rng.integers(0, 2, 3))
    axis = rng.integers(3)
    w = list(v)
    w[axis] += 1
    delta = np.zeros(3)
    delta[rng.integers(3)] = eps * rng.choice([-1, 1])
    q = binary_terms(u, v, w, delta, alpha)
    assert check_submodular(q)
    assert q.e00 == q.e11
    gap = q.e01 + q.e10 - q.e00 - q.e11
    assert gap == pytest.approx(2 * alpha * eps ** 2, rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_terms_nonnegative(seed):
    T, S, u = instance(np.random.default_rng(seed), dims=(3, 2, 4))
    assert data_term(T, S, u) >= 0
    assert regularization_term(u) >= 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_term_decomposition(seed):
    """Assembling unaries and pairwise terms for a labeling gives f(u')."""
    rng = np.random.default_rng(seed)
    T, S, u = instance(rng, dims=(3, 3, 2))
    alpha = 0.1
    delta = np.zeros(3)
    delta[rng.integers(3)] = 0.5 * rng.choice([-1, 1])
    labels = rng.integers(0, 2, (2, 3, 3))
    acc = []
    for z, y, x in itertools.product(range(2), range(3), range(3)):
        q = unary_terms(T, S, u, (x, y, z), delta, alpha)
        acc.append(q.e1 if labels[z, y, x] else q.e0)
    for v, w in pairs(T.meta.dims):
        q = binary_terms(u, v, w, delta, alpha)
        lv, lw = labels[v[2], v[1], v[0]], labels[w[2], w[1], w[0]]
        acc.append((q.e00, q.e01, q.e10, q.e11)[2 * lv + lw])
    moved = DisplacementField(u.meta, u.data + labels[..., None] * delta)
    assert math.fsum(acc) == pytest.approx(total_energy(T, S, moved, alpha), rel=1e-9)
