import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from privutil.core import PrivacySetting, stream_for_seed
from privutil.mechanisms import (
    DEFAULT_SINE_VALUES,
    CombinationMode,
    SettingGrid,
    draw_noise,
    generate_laplace_grid,
    generate_sine_grid,
    laplace_from_uniform,
    laplace_noise,
    load_grid,
    mask_value,
    mask_values,
    save_grid,
    sine_from_uniform,
    sine_polyonym_noise,
)

thetas = st.lists(st.sampled_from(DEFAULT_SINE_VALUES), min_size=1, max_size=5)


class TestLaplace:
    def test_matches_scipy_quantiles(self):
        u = np.linspace(0.001, 0.999, 999)
        np.testing.assert_allclose(laplace_from_uniform(u, 0.7), stats.laplace.ppf(u, scale=0.7), atol=1e-12)

    def test_extreme_uniforms_finite(self):
        w = laplace_from_uniform(np.array([0.0, 1.0 - 2**-53]), 1.0)
        assert np.all(np.isfinite(w))
        assert w[0] == pytest.approx(-w[1])

    def test_tail_bound(self):
        rng = stream_for_seed(3)
        w = draw_noise(PrivacySetting.laplace(0.005), rng, 200_000)
        # P(|w| > 0.06) = exp(-12)
        assert np.mean(np.abs(w) >= 0.06) < 1e-4

    def test_ks_against_scipy(self):
        w = draw_noise(PrivacySetting.laplace(2.0), stream_for_seed(9), 50_000)
        assert stats.kstest(w, stats.laplace(scale=2.0).cdf).pvalue > 1e-3

    def test_scale_family(self):
        a = draw_noise(PrivacySetting.laplace(0.001), stream_for_seed(1), 1000)
        b = draw_noise(PrivacySetting.laplace(10.0), stream_for_seed(1), 1000)
        np.testing.assert_allclose(b, a * 1e4, rtol=1e-9)

    def test_scalar_helper(self):
        assert math.isfinite(laplace_noise(1.0, stream_for_seed(0)))
        with pytest.raises(ValueError):
            laplace_noise(0.0, stream_for_seed(0))


class TestSine:
    def test_single_coefficient(self):
        assert sine_from_uniform(0.25, (0.18, 0, 0, 0, 0)) == pytest.approx(0.18)

    @given(thetas)
    def test_zero_at_half(self, theta):
        assert abs(sine_from_uniform(0.5, theta)) < 1e-12

    @given(thetas, st.floats(0, 1, exclude_max=True))
    def test_half_period_antisymmetry(self, theta, r):
        a = sine_from_uniform(r, theta)
        b = sine_from_uniform((r + 0.5) % 1.0, theta)
        assert a == pytest.approx(-b, abs=1e-9)

    @given(thetas, st.floats(0, 1, exclude_max=True))
    def test_direct_formula(self, theta, r):
        s = math.sin(2 * math.pi * r)
        expected = sum((t * s) ** (2 * k + 1) for k, t in enumerate(theta))
        assert sine_from_uniform(r, theta) == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_zero_coefficients(self):
        rng = stream_for_seed(0)
        assert mask_value(PrivacySetting.sine((0, 0, 0, 0, 0)), 4.2, rng) == 4.2

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            sine_polyonym_noise((-0.1,), stream_for_seed(0))


class TestMasking:
    def test_nomask_identity(self):
        rng = stream_for_seed(0)
        assert mask_value(PrivacySetting.nomask(), 3.2, rng) == 3.2
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(mask_values(PrivacySetting.nomask(), x, rng), x)

    def test_nomask_consumes_nothing(self):
        rng = stream_for_seed(4)
        draw_noise(PrivacySetting.nomask(), rng, 10)
        assert rng.random() == stream_for_seed(4).random()

    def test_one_uniform_per_value(self):
        rng = stream_for_seed(4)
        draw_noise(PrivacySetting.sine((0.3, 0.6)), rng, 10)
        ref = stream_for_seed(4)
        ref.random(10)
        assert rng.random() == ref.random()

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            mask_value(PrivacySetting.laplace(1.0), float("nan"), stream_for_seed(0))

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.001, 10), st.integers(0, 2**32))
    def test_masked_finite(self, b, seed):
        out = mask_values(PrivacySetting.laplace(b), np.ones(100), stream_for_seed(seed))
        assert np.all(np.isfinite(out))


class TestGrids:
    def test_default_laplace_count(self):
        grid = generate_laplace_grid()
        assert len(grid) == 10_000
        assert grid.settings[0].params == (0.001,) and grid.settings[-1].params == (10.0,)

    def test_small_laplace(self):
        assert [s.params[0] for s in generate_laplace_grid(1, 1, 3)] == [1, 2, 3]
        assert [s.params[0] for s in generate_laplace_grid(0.5, 0.2, 1.0)] == [0.5, 0.7, 0.9]

    def test_laplace_bad_bounds(self):
        with pytest.raises(ValueError):
            generate_laplace_grid(0, 0.1, 1)
        with pytest.raises(ValueError):
            generate_laplace_grid(1, 0, 2)

    def test_default_sine_values(self):
        assert len(DEFAULT_SINE_VALUES) == 16 and 0.0 in DEFAULT_SINE_VALUES

    def test_sine_counts(self):
        assert len(generate_sine_grid()) == math.comb(20, 5) == 15_504
        multi = generate_sine_grid((0, 1), 2)
        assert sorted(s.params for s in multi) == [(0, 0), (0, 1), (1, 1)]
        assert len(generate_sine_grid((0, 1), 2, CombinationMode.CARTESIAN)) == 4

    def test_duplicate_ids_rejected(self):
        s = PrivacySetting.laplace(1.0)
        with pytest.raises(ValueError, match="duplicate"):
            SettingGrid((s, s))

    def test_thinned_keeps_ends(self):
        grid = generate_laplace_grid(1, 1, 100)
        thin = grid.thinned(10)
        assert len(thin) == 10
        assert thin.settings[0] == grid.settings[0] and thin.settings[-1] == grid.settings[-1]
        assert grid.thinned(500) is grid

    def test_grid_round_trip(self, tmp_path):
        grid = generate_laplace_grid(0.1, 0.1, 0.3) + generate_sine_grid((0, 0.18), 2)
        grid = grid + SettingGrid((PrivacySetting.nomask(),))
        save_grid(tmp_path / "g.csv", grid)
        assert load_grid(tmp_path / "g.csv").settings == grid.settings

    def test_load_grid_reports_line(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("id,mechanism,p0\nA,laplace,1\nB,laplace,-1\n")
        with pytest.raises(ValueError, match=":3:"):
            load_grid(p)
