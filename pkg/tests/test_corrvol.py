import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pegeo.corrvol import (CorrelationVolume, MatchDistribution, build_volume, epipolar_slice,
                           epipolar_slice_from_grids, hard_argmax_displacement, match_distribution,
                           normalize_tokens, soft_argmax_displacement, soft_argmin_disparity)
from pegeo.grid import InvalidArgument, TokenGrid


def random_grid(rng, rows=3, cols=4, dim=8, unit=True):
    g = TokenGrid(rng.normal(size=(rows, cols, dim)))
    return normalize_tokens(g) if unit else g


class TestNormalize:
    def test_three_four_five(self):
        g = TokenGrid(np.array([[[3.0, 4.0, 0.0]]]))
        assert normalize_tokens(g).data[0, 0].tolist() == pytest.approx([0.6, 0.8, 0.0])

    def test_unit_tokens_unchanged(self, rng):
        g = random_grid(rng)
        assert np.allclose(normalize_tokens(g).data, g.data, atol=1e-12)

    def test_every_norm_is_one(self, rng):
        g = normalize_tokens(random_grid(rng, unit=False))
        assert np.allclose(np.linalg.norm(g.data, axis=-1), 1.0, atol=1e-9)

    def test_zero_token_replaced_and_flagged(self):
        data = np.ones((1, 2, 3))
        data[0, 1] = 0.0
        out, mask = normalize_tokens(TokenGrid(data), return_mask=True)
        assert mask.tolist() == [[False, True]]
        assert out.data[0, 1].tolist() == [1.0, 0.0, 0.0]


class TestVolume:
    def test_self_similarity_diagonal(self, rng):
        g = random_grid(rng)
        vol = build_volume(g, g)
        assert vol.normalized
        for y in range(3):
            for x in range(4):
                assert vol.data[y, x, y, x] == pytest.approx(1.0, abs=1e-12)

    def test_orthonormal_tokens(self):
        g = TokenGrid(np.eye(4).reshape(2, 2, 4))
        vol = build_volume(g, g)
        assert np.array_equal(vol.data.reshape(4, 4), np.eye(4))

    def test_hand_2x2(self):
        a = TokenGrid(np.array([[[1.0, 0.0], [0.0, 2.0]], [[1.0, 1.0], [3.0, -1.0]]]))
        b = TokenGrid(np.array([[[2.0, 1.0], [0.0, 1.0]], [[1.0, -1.0], [0.5, 0.5]]]))
        vol = build_volume(a, b)
        for idx in np.ndindex(2, 2, 2, 2):
            y, x, yy, xx = idx
            assert vol.data[idx] == float(a.data[y, x] @ b.data[yy, xx])
        assert not vol.normalized

    def test_view_swap_is_transpose(self, rng):
        a, b = random_grid(rng, 3, 4), random_grid(rng, 2, 5)
        assert np.allclose(build_volume(b, a).data, build_volume(a, b).data.transpose(2, 3, 0, 1), atol=1e-12)

    def test_normalized_range(self, rng):
        vol = build_volume(random_grid(rng), random_grid(rng))
        assert np.all(np.abs(vol.data) <= 1 + 1e-6)

    def test_dim_mismatch(self, rng):
        with pytest.raises(InvalidArgument):
            build_volume(random_grid(rng, dim=4), random_grid(rng, dim=5))


class TestMatching:
    def test_uniform_volume_gives_uniform_distribution(self):
        dist = match_distribution(CorrelationVolume(np.zeros((2, 2, 3, 4)), False), 50.0)
        assert np.allclose(dist.data, 1 / 12)

    def test_sharp_winner(self):
        data = np.zeros((1, 1, 2, 3))
        data[0, 0, 1, 2] = 1.0
        dist = match_distribution(CorrelationVolume(data, True), 500.0)
        assert dist.data[0, 0, 1, 2] > 0.999

    def test_rows_sum_to_one(self, rng):
        vol = build_volume(random_grid(rng), random_grid(rng))
        dist = match_distribution(vol, 10.0)
        assert np.allclose(dist.data.sum(axis=(2, 3)), 1.0, atol=1e-9)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_non_positive_tau(self, tau):
        with pytest.raises(InvalidArgument):
            match_distribution(CorrelationVolume(np.zeros((1, 1, 1, 1)), False), tau)

    def test_identity_match_has_zero_displacement(self):
        g = TokenGrid(np.eye(6).reshape(2, 3, 6))
        disp = soft_argmax_displacement(match_distribution(build_volume(g, g), 500.0))
        assert np.allclose(disp, 0.0, atol=1e-12)

    def test_two_symmetric_modes_average_out(self):
        p = np.zeros((1, 3, 1, 3))
        p[0, 1, 0, 0] = p[0, 1, 0, 2] = 0.5
        disp = soft_argmax_displacement(MatchDistribution(p, 1.0))
        assert disp[0, 1].tolist() == [0.0, 0.0]

    def test_hand_three_candidate_expectation(self):
        p = np.zeros((1, 3, 1, 3))
        p[0, 1, 0] = [0.2, 0.5, 0.3]
        assert soft_argmax_displacement(MatchDistribution(p, 1.0))[0, 1, 0] == pytest.approx(0.1)

    def test_temperature_sharpens(self, rng):
        vol = build_volume(random_grid(rng), random_grid(rng))
        peaks = [match_distribution(vol, t).data.reshape(12, -1).max(axis=1) for t in (1, 10, 100)]
        assert np.all(peaks[0] <= peaks[1] + 1e-15) and np.all(peaks[1] <= peaks[2] + 1e-15)

    def test_soft_converges_to_hard_on_separated_volume(self, rng):
        vol = build_volume(random_grid(rng, 4, 4, 32), random_grid(rng, 4, 4, 32))
        flat = np.sort(vol.data.reshape(16, -1), axis=1)
        margin = (flat[:, -1] - flat[:, -2]).reshape(4, 4)
        soft = soft_argmax_displacement(match_distribution(vol, 500.0))
        hard = hard_argmax_displacement(vol)
        sel = margin > 0.1
        assert sel.any()
        assert np.abs(soft - hard)[sel].max() < 0.01


class TestSlice:
    def test_definition(self, rng):
        a, b = random_grid(rng), random_grid(rng)
        vol = build_volume(a, b)
        sl = epipolar_slice(vol)
        for y, x, xx in np.ndindex(3, 4, 4):
            assert sl[y, x, xx] == vol.data[y, x, y, xx]
        assert np.allclose(epipolar_slice_from_grids(a, b), sl, atol=1e-14)

    def test_identical_grids_peak_at_zero(self, rng):
        g = random_grid(rng, 3, 5, 16)
        sl = epipolar_slice(build_volume(g, g))
        assert np.array_equal(sl.argmax(axis=-1) - np.arange(5)[None, :], np.zeros((3, 5), int))

    def test_periodic_shift_peaks_at_plus_one(self, rng):
        g = random_grid(rng, 2, 6, 16)
        right = TokenGrid(np.roll(g.data, 1, axis=1))
        sl = epipolar_slice(build_volume(g, right))
        assert np.array_equal((sl.argmax(axis=-1) - np.arange(6)[None, :]) % 6, np.ones((2, 6), int))

    def test_row_mismatch(self, rng):
        with pytest.raises(InvalidArgument):
            epipolar_slice(build_volume(random_grid(rng, 2, 3), random_grid(rng, 3, 3)))

    def test_one_hot_slice(self):
        sl = np.zeros((1, 1, 5))
        sl[0, 0, 2] = 1.0
        assert soft_argmin_disparity(sl, 100.0).values[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_symmetric_and_uniform_slices(self):
        centred = np.zeros((1, 3, 3))
        centred[0, 1] = [0.3, 0.9, 0.3]
        assert soft_argmin_disparity(centred, 20.0).values[0, 1] == pytest.approx(0.0, abs=1e-12)
        assert soft_argmin_disparity(np.zeros((1, 3, 3)), 7.0).values[0, 1] == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 200.0))
    def test_slice_agrees_with_row_restricted_soft_argmax(self, seed, tau):
        r = np.random.default_rng(seed)
        a, b = random_grid(r, 3, 4), random_grid(r, 3, 4)
        vol = build_volume(a, b)
        masked = np.full(vol.data.shape, -np.inf)
        for y in range(3):
            masked[y, :, y, :] = vol.data[y, :, y, :]
        dist = match_distribution(CorrelationVolume(masked, True), tau)
        full = soft_argmax_displacement(dist)[..., 0]
        assert np.allclose(soft_argmin_disparity(epipolar_slice(vol), tau).values, full, atol=1e-9)

    def test_bad_tau(self):
        with pytest.raises(InvalidArgument):
            soft_argmin_disparity(np.zeros((1, 1, 2)), 0.0)
