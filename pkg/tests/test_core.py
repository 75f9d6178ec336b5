import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shieldlab.core import (
    ShapeError,
    as_image,
    from_blocks,
    l2_distance,
    linf_distance,
    perturbation_stats,
    project_linf,
    to_blocks,
)


def test_to_blocks_exact_tiling():
    g = to_blocks(np.zeros((8, 8)))
    assert (g.blocks_y, g.blocks_x, g.pad_bottom, g.pad_right) == (1, 1, 0, 0)


def test_to_blocks_ceil_padding():
    g = to_blocks(np.random.default_rng(0).random((9, 8)))
    assert (g.blocks_y, g.blocks_x, g.pad_bottom, g.pad_right) == (2, 1, 7, 0)


def test_to_blocks_pads_by_edge_replication():
    img = np.random.default_rng(1).random((9, 10))
    g = to_blocks(img)
    full = np.swapaxes(g.blocks, 1, 2).reshape(16, 16)
    assert np.array_equal(full[9:, :10], np.repeat(img[-1:, :], 7, axis=0))
    assert np.array_equal(full[:9, 10:], np.repeat(img[:, -1:], 6, axis=1))


def test_constant_image_gives_constant_blocks():
    g = to_blocks(np.full((16, 24), 0.5))
    assert g.blocks.shape == (2, 3, 8, 8)
    assert np.all(g.blocks == 0.5)


def test_from_blocks_cases():
    img = np.random.default_rng(2).random((13, 17))
    assert np.array_equal(from_blocks(to_blocks(img)), img)
    zero = to_blocks(np.zeros((8, 8)))
    assert np.array_equal(from_blocks(zero), np.zeros((8, 8)))
    assert from_blocks(to_blocks(np.ones((10, 10)))).shape == (10, 10)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_block_round_trip_property(h, w, seed):
    img = np.random.default_rng(seed).random((h, w))
    assert np.array_equal(from_blocks(to_blocks(img)), img)


def test_as_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        as_image(np.full((4, 4), 1.5))
    with pytest.raises(ShapeError):
        as_image(np.zeros(5))


def test_linf_distance():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.1, 0.8, (6, 7))
    assert linf_distance(a, a) == 0.0
    assert linf_distance(a, a + 16 / 255) == pytest.approx(16 / 255, abs=1e-15)
    b = rng.random((6, 7))
    brute = max(abs(a[i, j] - b[i, j]) for i in range(6) for j in range(7))
    assert linf_distance(a, b) == brute


def test_l2_distance():
    rng = np.random.default_rng(4)
    a = rng.random((5, 5))
    assert l2_distance(a, a) == 0.0
    b = a.copy()
    b[2, 3] += 0.3
    assert l2_distance(a, b) == pytest.approx(0.3, abs=1e-12)
    c = rng.random((5, 5))
    naive = math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a.ravel(), c.ravel())))
    assert l2_distance(a, c) == pytest.approx(naive, abs=1e-9)


def test_distance_dimension_mismatch():
    with pytest.raises(ShapeError):
        linf_distance(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        l2_distance(np.zeros((2, 2)), np.zeros((3, 2)))


def test_project_linf_examples():
    rng = np.random.default_rng(5)
    x = rng.random((8, 8))
    assert np.array_equal(project_linf(rng.random((8, 8)), x, 0.0), x)
    inside = np.clip(x + rng.uniform(-0.01, 0.01, x.shape), 0, 1)
    assert np.array_equal(project_linf(inside, x, 0.05), inside)
    out = project_linf(np.full((4, 4), 1.2), np.full((4, 4), 0.9), 16 / 255)
    # per-pixel clamp oracle: min(1.2, 0.9 + eps), then [0, 1]
    assert np.allclose(out, min(1.2, 0.9 + 16 / 255), atol=1e-15)
    assert out[0, 0] == pytest.approx(0.9627, abs=1e-4)


def test_project_linf_negative_eps():
    with pytest.raises(ValueError):
        project_linf(np.zeros((2, 2)), np.zeros((2, 2)), -0.1)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.3))
def test_project_linf_properties(seed, eps):
    rng = np.random.default_rng(seed)
    x = rng.random((9, 7))
    adv = x + rng.normal(0, 0.3, x.shape)
    p = project_linf(adv, x, eps)
    assert np.abs(p - x).max() <= eps
    assert p.min() >= 0 and p.max() <= 1
    assert np.array_equal(project_linf(p, x, eps), p)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distance_symmetry_and_chain(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((6, 6)), rng.random((6, 6))
    assert linf_distance(a, b) == linf_distance(b, a)
    assert l2_distance(a, b) == l2_distance(b, a)
    s = perturbation_stats(a, b)
    assert s.linf <= s.l2 + 1e-15
    assert s.l2 <= s.linf * math.sqrt(a.size) + 1e-12
