from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taps.numcore import RngState, gaussian_matrix, gumbel_vector, row_norms, splitmix64, stats


def test_splitmix64_reference_vectors():
    # First outputs of the standard splitmix64 stream seeded with 0 and 1;
    # widely published test vectors for this mixer.
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(1) == 0x910A2DEC89025CC1
    # stays in 64-bit range and handles values beyond it by wrapping
    assert 0 <= splitmix64(2**64 - 1) < 2**64
    assert splitmix64(2**64 + 5) == splitmix64(5)


def test_splitmix64_distinct_nearby_inputs():
    outs = {splitmix64(i) for i in range(1000)}
    assert len(outs) == 1000


def test_rng_state_replay():
    a = RngState(7, position=5)
    b = RngState(7, position=5)
    assert np.array_equal(gaussian_matrix(a, 3, 4), gaussian_matrix(b, 3, 4))
    # the draw advanced both equally
    assert a.position == b.position == 6


def test_rng_position_advances_per_draw():
    s = RngState(42)
    gaussian_matrix(s, 2, 2)
    gumbel_vector(s, 3, 1.0)
    assert s.position == 2


def test_rng_different_positions_differ():
    a = gaussian_matrix(RngState(3, position=0), 4, 4)
    b = gaussian_matrix(RngState(3, position=1), 4, 4)
    assert not np.array_equal(a, b)


def test_rng_different_seeds_differ():
    a = gaussian_matrix(RngState(1), 4, 4)
    b = gaussian_matrix(RngState(2), 4, 4)
    assert not np.array_equal(a, b)


def test_clone_is_independent():
    s = RngState(9, position=3)
    c = s.clone()
    gaussian_matrix(s, 2, 2)
    assert s.position == 4 and c.position == 3
    # the clone replays the draw the original already consumed
    s2 = RngState(9, position=3)
    assert np.array_equal(gaussian_matrix(c, 2, 2), gaussian_matrix(s2, 2, 2))


def test_gaussian_matrix_shape_and_moments():
    m = gaussian_matrix(RngState(0), 200, 50)
    assert m.shape == (200, 50) and m.dtype == np.float64
    assert abs(m.mean()) < 0.05
    assert abs(m.std() - 1.0) < 0.05


def test_gaussian_matrix_rejects_bad_dims():
    with pytest.raises(ValueError):
        gaussian_matrix(RngState(0), 0, 3)
    with pytest.raises(ValueError):
        gaussian_matrix(RngState(0), 3, -1)


def test_gumbel_zero_temperature_is_exact_zeros_but_still_draws():
    s = RngState(5)
    g = gumbel_vector(s, 8, 0.0)
    assert np.array_equal(g, np.zeros(8))
    assert s.position == 1
    # consuming the position shifts everything after it
    after_zero_draw = gaussian_matrix(s, 2, 2)
    fresh = gaussian_matrix(RngState(5), 2, 2)
    assert not np.array_equal(after_zero_draw, fresh)


def test_gumbel_scales_linearly_with_temperature():
    g1 = gumbel_vector(RngState(11, position=2), 100, 1.0)
    g2 = gumbel_vector(RngState(11, position=2), 100, 2.5)
    assert np.allclose(g2, 2.5 * g1)


def test_gumbel_location_roughly_euler_mascheroni():
    g = gumbel_vector(RngState(1), 200_000, 1.0)
    assert abs(g.mean() - 0.5772) < 0.01


def test_stats_hand_value():
    # mean of {1,2,3,4} is 2.5; population variance is
    # ((1.5)^2 + (0.5)^2 + (0.5)^2 + (1.5)^2)/4 = 1.25
    mean, std = stats(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert mean == pytest.approx(2.5, abs=0)
    assert std == pytest.approx(np.sqrt(1.25), rel=1e-15)


def test_stats_population_not_sample():
    # a sample (ddof=1) std of [0, 2] would be sqrt(2); population std is 1
    _, std = stats(np.array([[0.0, 2.0]]))
    assert std == pytest.approx(1.0, rel=1e-15)


def test_row_norms_hand_value():
    out = row_norms(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert np.allclose(out, [5.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(min_value=0.1, max_value=10),
    b=st.floats(min_value=-5, max_value=5),
    seed=st.integers(min_value=0, max_value=2**32),
)
def test_stats_affine_response(a, b, seed):
    m = gaussian_matrix(RngState(seed), 5, 7)
    mean0, std0 = stats(m)
    mean1, std1 = stats(a * m + b)
    assert mean1 == pytest.approx(a * mean0 + b, rel=1e-9, abs=1e-9)
    assert std1 == pytest.approx(a * std0, rel=1e-9)
