import numpy as np
import pytest

from flux.services.sampling import (
    SamplerConfig,
    SamplingGrid,
    candidates,
    grid_coords,
    largest_grid,
    patchify,
    resize_video,
    sample_grid,
    temporal_indices,
    token_motion,
    unpatchify,
)
from flux.services.videogen import GenSpec, gen_video
from flux.utils import ValidationError


def test_full_scale_lattice_include_and_exclude():
    grids = {(g.F, g.R): g for g in candidates(SamplerConfig.full_scale())}
    assert (8, 224) in grids and grids[(8, 224)].pool == 8 * 16 * 16 == 2048
    assert (4, 168) not in grids


def test_full_scale_lattice_matches_brute_force():
    cfg = SamplerConfig.full_scale()
    expected = []
    for F in range(4, 25, 2):
        for R in (168, 196, 224, 252):
            pool = F * (R // 14) ** 2
            if 2048 <= pool <= 4096:
                expected.append((F, R))
    assert [(g.F, g.R) for g in candidates(cfg)] == expected


def test_degenerate_range_has_one_candidate():
    cfg = SamplerConfig(f_min=8, f_max=8, r_min=224, r_max=224, pool_min=0, pool_max=None)
    grids = candidates(cfg)
    assert len(grids) == 1 and grids[0].pool == 2048
    assert all(sample_grid(seed, cfg) == grids[0] for seed in range(20))


def test_sample_grid_is_deterministic():
    cfg = SamplerConfig.full_scale()
    assert sample_grid(42, cfg) == sample_grid(42, cfg)


def test_sample_grid_is_uniform_and_inside_threshold():
    cfg = SamplerConfig.full_scale()
    grids = candidates(cfg)
    index = {(g.F, g.R): i for i, g in enumerate(grids)}
    counts = np.zeros(len(grids))
    draws = 10_000
    for seed in range(draws):
        grid = sample_grid(seed, cfg)
        assert 2048 <= grid.pool <= 4096
        counts[index[(grid.F, grid.R)]] += 1
    p = 1.0 / len(grids)
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 4 * sigma)


def test_fixed_grid_pins_draws():
    cfg = SamplerConfig(fixed_grid=(8, 42))
    assert {(sample_grid(s, cfg).F, sample_grid(s, cfg).R) for s in range(10)} == {(8, 42)}


def test_fixed_grid_must_be_a_candidate():
    with pytest.raises(ValidationError):
        SamplerConfig(fixed_grid=(8, 30)).validate()


@pytest.mark.parametrize(
    "overrides",
    [
        {"f_min": 10, "f_max": 4},
        {"r_min": 30, "r_max": 30},
        {"pool_min": 500, "pool_max": 100},
        {"pool_min": 10_000},
    ],
)
def test_invalid_sampler(overrides):
    with pytest.raises(ValidationError):
        SamplerConfig(**overrides).validate()


def test_largest_grid():
    grid = largest_grid(SamplerConfig())
    assert (grid.F, grid.R, grid.pool) == (16, 56, 256)


def test_temporal_indices():
    assert temporal_indices(16, 4).tolist() == [0, 4, 8, 12]
    assert temporal_indices(10, 10).tolist() == list(range(10))
    with pytest.raises(ValidationError):
        temporal_indices(4, 6)


def test_patchify_tiny_case(rng):
    video = rng.uniform(size=(2, 28, 28, 3))
    pool = patchify(video, SamplingGrid(2, 28))
    assert pool.size == 8
    assert pool.features.shape == (8, 14 * 14 * 3)
    assert pool.coords.tolist() == [[t, h, w] for t in range(2) for h in range(2) for w in range(2)]
    np.testing.assert_array_equal(pool.features[3], video[0, 14:, 14:].reshape(-1))


def test_constant_video_gives_identical_rows():
    pool = patchify(np.full((4, 56, 56, 3), 0.25), SamplingGrid(4, 42))
    np.testing.assert_allclose(pool.features, np.broadcast_to(pool.features[0], pool.features.shape), atol=1e-12)


def test_unpatchify_round_trip(rng):
    video = rng.uniform(size=(8, 56, 56, 3))
    grid = SamplingGrid(4, 42)
    pool = patchify(video, grid)
    assert np.array_equal(unpatchify(pool), resize_video(video, 4, 42))


def test_patchify_preserves_energy(rng):
    video = rng.uniform(size=(6, 56, 56, 3))
    grid = SamplingGrid(6, 28)
    pool = patchify(video, grid)
    resized = resize_video(video, 6, 28)
    assert abs(np.sum(pool.features**2) - np.sum(resized**2)) < 1e-9


def test_grid_coords_row_major():
    coords = grid_coords(SamplingGrid(2, 42))
    assert coords.shape == (18, 3)
    assert coords[4].tolist() == [0, 1, 1]
    assert coords[9].tolist() == [1, 0, 0]


def test_token_motion_follows_the_mask():
    sample = gen_video(0, GenSpec(sprites=(1, 1)))
    grid = SamplingGrid(8, 56)
    moving = token_motion(sample, grid)
    assert moving.shape == (grid.pool,)
    assert moving.any() and not moving.all()
    still = gen_video(0, GenSpec(sprites=(1, 1)))
    still.motion_mask[:] = False
    assert not token_motion(still, grid).any()
