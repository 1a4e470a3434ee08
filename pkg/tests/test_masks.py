import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pano_gin.masks import MaskSpec, draw_rect, draw_stroke, mask_ratio, sample_mask

BINS = [(0.0, 0.1), (0.1, 0.2), (0.2, 0.3), (0.3, 0.5)]


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(BINS), st.integers(0, 2**31 - 1), st.sampled_from([16, 32]))
def test_coverage_lands_in_bin(bin_, seed, size):
    lo, hi = bin_
    mask = sample_mask(MaskSpec(lo, hi), size, np.random.default_rng(seed))
    assert mask.shape == (6, size, size)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert lo <= mask_ratio(mask) < hi


def test_same_seed_same_mask():
    a = sample_mask(MaskSpec(0.1, 0.2, seed=5), 32)
    b = sample_mask(MaskSpec(0.1, 0.2, seed=5), 32)
    assert np.array_equal(a, b)
    c = sample_mask(MaskSpec(0.1, 0.2), 32, np.random.default_rng(6))
    assert not np.array_equal(a, c)


def test_empty_budget_gives_empty_mask():
    mask = sample_mask(MaskSpec(0.0, 0.1, strokes=(0, 0), rects=(0, 0)), 16, np.random.default_rng(0))
    assert mask_ratio(mask) == 0.0


def test_infeasible_spec_raises():
    spec = MaskSpec(0.95, 1.0, strokes=(1, 1), rects=(0, 0), stroke_width=(0.01, 0.02),
                    max_shapes=2, max_retries=5)
    with pytest.raises(ValueError, match="could not sample"):
        sample_mask(spec, 16, np.random.default_rng(0))
    # side faces alone cover at most 4/6 of the cube
    with pytest.raises(ValueError):
        sample_mask(MaskSpec(0.7, 0.8, max_retries=3), 8, np.random.default_rng(0), sides_only=True)


def test_sides_only_leaves_top_and_bottom_known():
    mask = sample_mask(MaskSpec(0.2, 0.3), 16, np.random.default_rng(1), sides_only=True)
    assert not mask[4:].any() and mask[:4].any()


def test_spec_validation():
    with pytest.raises(ValueError):
        MaskSpec(0.3, 0.2)
    with pytest.raises(ValueError):
        MaskSpec(-0.1, 0.2)


def test_shapes_stay_on_canvas():
    rng = np.random.default_rng(0)
    canvas = np.zeros((16, 64), np.float32)
    for _ in range(20):
        draw_stroke(canvas, rng, 16, (0.05, 0.1))
        draw_rect(canvas, rng, 16, (0.1, 0.3))
    assert canvas.shape == (16, 64) and canvas.any()
    assert set(np.unique(canvas)) <= {0.0, 1.0}
