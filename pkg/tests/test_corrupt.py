"""Corruption strategies and the forward-noising schedule."""

import math

import numpy as np
import pytest

from modlab.corrupt import (
    DEFAULT_SCHEDULE,
    CorruptionError,
    CorruptionSpec,
    NoiseSchedule,
    alpha_bar,
    corrupt,
)


class TestSchedule:
    def test_starts_at_one(self):
        assert alpha_bar(DEFAULT_SCHEDULE, 0) == 1.0

    def test_first_step(self):
        assert alpha_bar(DEFAULT_SCHEDULE, 1) == pytest.approx(0.9999, abs=1e-12)

    def test_strictly_decreasing(self):
        values = DEFAULT_SCHEDULE.alpha_bar
        assert np.all(np.diff(values) < 0)
        assert alpha_bar(DEFAULT_SCHEDULE, 500) < alpha_bar(DEFAULT_SCHEDULE, 50)

    def test_out_of_range(self):
        with pytest.raises(CorruptionError):
            alpha_bar(DEFAULT_SCHEDULE, -1)
        with pytest.raises(CorruptionError):
            alpha_bar(DEFAULT_SCHEDULE, DEFAULT_SCHEDULE.T + 1)

    def test_matches_direct_product(self):
        betas = np.linspace(1e-4, 0.02, 1000)
        direct = np.prod(1.0 - betas[:50])
        assert alpha_bar(DEFAULT_SCHEDULE, 50) == pytest.approx(direct, rel=1e-12)

    def test_invalid_schedule_rejected(self):
        with pytest.raises(CorruptionError):
            NoiseSchedule(T=0)
        with pytest.raises(CorruptionError):
            NoiseSchedule(beta_start=0.5, beta_end=0.1)


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(CorruptionError):
            CorruptionSpec(kind="sandstorm")

    def test_step_bounds(self):
        with pytest.raises(CorruptionError):
            CorruptionSpec(kind="diffusion", t=1001)

    def test_sigma_positive(self):
        with pytest.raises(CorruptionError):
            CorruptionSpec(kind="gaussian", sigma=0.0)

    def test_reseeded_copies(self):
        spec = CorruptionSpec(kind="diffusion", t=50, seed=1)
        other = spec.reseeded(99)
        assert other.seed == 99 and other.t == 50 and spec.seed == 1


class TestCorrupt:
    def test_zeros(self):
        x = np.arange(6, dtype=float)
        out = corrupt(x, CorruptionSpec(kind="zeros"))
        assert np.array_equal(out, np.zeros(6))

    def test_gaussian_is_replacement_noise(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=8) + 100.0  # far from zero-mean noise
        draws = np.array([corrupt(x, CorruptionSpec(kind="gaussian", sigma=1.0, seed=s))
                          for s in range(500)])
        # replacement: mean ~ 0 rather than ~ x
        assert np.abs(draws.mean(axis=0)).max() < 0.2
        assert abs(draws.std() - 1.0) < 0.05

    def test_diffusion_identity_at_zero_steps(self):
        x = np.linspace(-1, 1, 8)
        out = corrupt(x, CorruptionSpec(kind="diffusion", t=0, seed=3))
        assert np.array_equal(out, x)

    def test_diffusion_one_step_signal_factor(self):
        x = np.ones(8)
        spec = CorruptionSpec(kind="diffusion", t=1, seed=5)
        out = corrupt(x, spec)
        eps = np.random.default_rng(5).standard_normal(8)
        expected = math.sqrt(0.9999) * x + math.sqrt(1 - 0.9999) * eps
        np.testing.assert_allclose(out, expected, atol=1e-12)
        assert math.sqrt(0.9999) == pytest.approx(0.99995, abs=1e-5)

    def test_determinism(self):
        x = np.linspace(0, 1, 8)
        for kind in ("gaussian", "diffusion"):
            spec = CorruptionSpec(kind=kind, t=200, seed=42)
            assert np.array_equal(corrupt(x, spec), corrupt(x, spec))

    def test_outputs_finite_and_dimension_preserving(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=8)
        pool = [rng.normal(size=8) for _ in range(4)]
        for kind in ("zeros", "gaussian", "random_swap", "diffusion"):
            out = corrupt(x, CorruptionSpec(kind=kind, t=300, seed=7), pool=pool)
            assert out.shape == x.shape
            assert np.all(np.isfinite(out))

    def test_random_swap_excludes_own_vector(self):
        x = np.ones(4)
        pool = [np.ones(4), np.array([1.0, 2.0, 3.0, 4.0])]
        for seed in range(20):
            out = corrupt(x, CorruptionSpec(kind="random_swap", seed=seed), pool=pool)
            assert not np.array_equal(out, x)

    def test_random_swap_empty_pool(self):
        with pytest.raises(CorruptionError):
            corrupt(np.ones(4), CorruptionSpec(kind="random_swap"), pool=[])
        with pytest.raises(CorruptionError):
            corrupt(np.ones(4), CorruptionSpec(kind="random_swap"), pool=[np.ones(4)])

    def test_swap_returns_copy(self):
        pool = [np.zeros(3), np.full(3, 2.0)]
        out = corrupt(np.ones(3), CorruptionSpec(kind="random_swap", seed=1), pool=pool)
        out += 1.0
        assert np.array_equal(pool[0], np.zeros(3)) and np.array_equal(pool[1], np.full(3, 2.0))


class TestSnrOrdering:
    def test_correlation_with_original_decreases_in_t(self):
        # Seed-averaged correlation between input and corrupted output
        # must fall as the step count grows: t=10 > t=50 > t=500.
        rng = np.random.default_rng(11)
        mean_corr = {}
        for t in (10, 50, 500):
            corrs = []
            for trial in range(1000):
                x = rng.normal(size=8)
                x /= np.linalg.norm(x)
                out = corrupt(x, CorruptionSpec(kind="diffusion", t=t, seed=trial))
                corrs.append(float(x @ out) / max(np.linalg.norm(out), 1e-12))
            mean_corr[t] = np.mean(corrs)
        assert mean_corr[10] > mean_corr[50] > mean_corr[500]

    def test_signal_coefficient_monotone(self):
        coeffs = [math.sqrt(alpha_bar(DEFAULT_SCHEDULE, t)) for t in range(0, 1001, 50)]
        assert all(a > b for a, b in zip(coeffs, coeffs[1:]))
