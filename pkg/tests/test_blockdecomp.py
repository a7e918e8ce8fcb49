import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualfreq.blockdecomp import block_count, build_pyramid, merge_quadrants, split_quadrants
from dualfreq.errors import ShapeError


def test_split_smallest_case():
    block = np.array([[[1, 2], [3, 4]]])
    tl, tr, bl, br = split_quadrants(block)
    assert [q.item() for q in (tl, tr, bl, br)] == [1, 2, 3, 4]


def test_split_image_into_16x16(rng):
    img = rng.standard_normal((3, 32, 32))
    quads = split_quadrants(img)
    assert all(q.shape == (3, 16, 16) for q in quads)
    np.testing.assert_array_equal(merge_quadrants(*quads), img)
    np.testing.assert_array_equal(quads[1], img[:, :16, 16:])
    np.testing.assert_array_equal(quads[2], img[:, 16:, :16])


def test_split_odd_extent():
    with pytest.raises(ShapeError):
        split_quadrants(np.zeros((1, 3, 4)))


@pytest.mark.parametrize("depth,count", [(0, 1), (1, 5), (2, 21)])
def test_pyramid_block_counts(depth, count, rng):
    p = build_pyramid(rng.standard_normal((3, 32, 32)), depth)
    assert len(p) == count == block_count(depth)
    assert p.depth == depth
    for d, level in enumerate(p.levels):
        assert level.shape == (4**d, 3, 32 // 2**d, 32 // 2**d)


def test_pyramid_depth_zero_is_identity(rng):
    img = rng.standard_normal((3, 8, 8))
    p = build_pyramid(img, 0)
    assert len(p.blocks()) == 1
    np.testing.assert_array_equal(p.blocks()[0], img)


def test_recursive_ordering():
    img = np.arange(16 * 16).reshape(1, 16, 16)
    p = build_pyramid(img, 2)
    level2 = p.levels[2]
    # block 1 is the top-right child of the top-left quadrant; block 4 starts the top-right quadrant
    np.testing.assert_array_equal(level2[1, 0], img[0, 0:4, 4:8])
    np.testing.assert_array_equal(level2[4, 0], img[0, 0:4, 8:12])
    np.testing.assert_array_equal(level2[2, 0], img[0, 4:8, 0:4])
    np.testing.assert_array_equal(level2[15, 0], img[0, 12:16, 12:16])


def test_batched_pyramid_matches_single(rng):
    batch = rng.standard_normal((3, 2, 16, 16))
    pb = build_pyramid(batch, 2)
    for i in range(3):
        ps = build_pyramid(batch[i], 2)
        for lb, ls in zip(pb.levels, ps.levels):
            np.testing.assert_array_equal(lb[i], ls)


def test_divisibility_error():
    with pytest.raises(ShapeError):
        build_pyramid(np.zeros((3, 12, 12)), 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_pyramid_is_lossless(depth, channels, seed):
    size = 2**depth * 2
    img = np.random.default_rng(seed).standard_normal((channels, size, size))
    p = build_pyramid(img, depth)
    assert len(p) == (4 ** (depth + 1) - 1) // 3
    for d in range(depth + 1):
        assert np.array_equal(p.reassemble(d), img)
        assert len({b.shape for b in p.levels[d]}) == 1
