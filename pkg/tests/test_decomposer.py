"""Recursive tiling: counts, exact coverage, ordering, nesting, sampling."""

import numpy as np
import pytest

from hierlearn.decomposer import (
    PatchRegion,
    decompose,
    max_granularity,
    sample_instance,
    sample_region,
)


def coverage_grid(shape, regions):
    cov = np.zeros(shape, dtype=np.intp)
    for r in regions:
        cov[r.top : r.top + r.height, r.left : r.left + r.width] += 1
    return cov


def test_n0_whole_image(rng):
    img = rng.random((10, 14))
    regions = decompose(img, 0)
    assert regions == [PatchRegion(0, 0, 10, 14, granularity=0)]


def test_first_split_is_vertical_224():
    img = np.zeros((224, 224))
    regions = decompose(img, 1)
    assert [(r.top, r.left, r.height, r.width) for r in regions] == [
        (0, 0, 224, 112),
        (0, 112, 224, 112),
    ]


def test_quadrants_and_sixteenths_224():
    img = np.zeros((224, 224))
    quads = decompose(img, 2)
    assert all((r.height, r.width) == (112, 112) for r in quads)
    assert [(r.top, r.left) for r in quads] == [(0, 0), (0, 112), (112, 0), (112, 112)]
    tiles = decompose(img, 4)
    assert len(tiles) == 16
    assert all((r.height, r.width) == (56, 56) for r in tiles)


@pytest.mark.parametrize("shape", [(224, 224), (223, 97), (97, 53)])
@pytest.mark.parametrize("n", range(7))
def test_tiling_oracle(shape, n):
    # brute-force per-pixel coverage: exactly one region covers each pixel
    img = np.zeros(shape)
    regions = decompose(img, n)
    assert len(regions) == 2**n
    cov = coverage_grid(shape, regions)
    assert (cov == 1).all()
    assert sum(r.height * r.width for r in regions) == shape[0] * shape[1]


def test_row_major_ordering(rng):
    regions = decompose(rng.random((64, 64)), 3)
    keys = [(r.top, r.left) for r in regions]
    assert keys == sorted(keys)


def test_granularity_too_large():
    with pytest.raises(ValueError):
        decompose(np.zeros((4, 4)), 5)  # needs 8 columns
    with pytest.raises(ValueError):
        decompose(np.zeros((2, 64)), 4)  # needs 4 rows


def test_max_granularity_consistent():
    for h, w in [(224, 224), (97, 53), (16, 16), (1, 1), (2, 2)]:
        n = max_granularity(h, w)
        decompose(np.zeros((h, w)), n)
        with pytest.raises(ValueError):
            decompose(np.zeros((h, w)), n + 1)


def test_nesting_two_levels_apart(rng):
    # every region at n sits inside exactly one region at n-2
    img = rng.random((97, 53))
    for n in (2, 3, 4):
        fine = decompose(img, n)
        coarse = decompose(img, n - 2)
        for f in fine:
            parents = [
                c
                for c in coarse
                if c.top <= f.top
                and c.left <= f.left
                and f.top + f.height <= c.top + c.height
                and f.left + f.width <= c.left + c.width
            ]
            assert len(parents) == 1


def test_monotone_max_tile_area(rng):
    img = rng.random((224, 223))
    areas = [max(r.height * r.width for r in decompose(img, n)) for n in range(7)]
    assert all(a1 >= a2 for a1, a2 in zip(areas, areas[1:]))


def test_sample_instance_n0_is_whole(rng):
    img = rng.random((12, 12))
    np.testing.assert_array_equal(sample_instance(img, 0, rng), img)


def test_sample_uniformity_n1():
    img = np.zeros((32, 32))
    counts = {0: 0, 16: 0}
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        region = sample_region(img, 1, rng)
        counts[region.left] += 1
    for left, c in counts.items():
        assert abs(c / 10_000 - 0.5) <= 0.02


def test_sample_deterministic_for_fixed_state(rng):
    img = rng.random((20, 20))
    a = sample_instance(img, 2, np.random.default_rng(77))
    b = sample_instance(img, 2, np.random.default_rng(77))
    np.testing.assert_array_equal(a, b)


def test_region_validation():
    with pytest.raises(ValueError):
        PatchRegion(0, 0, 0, 5)
    with pytest.raises(ValueError):
        PatchRegion(-1, 0, 2, 2)
