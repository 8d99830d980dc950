"""Channel law: flips, marginalized statistics, normalization."""

import itertools
import math

import numpy as np
import pytest

from spikelink.channel import (
    ChannelConfig,
    log_prob_clean,
    log_prob_noisy,
    noisy_spike_prob,
    sample_noisy,
    transmit,
)
from spikelink.numerics import SeededRng, sigmoid

# chi-square critical values at the 0.01 level, frozen from the inverse CDF
CHI2_99_DF3 = 11.344866730144373


class TestChannelConfig:
    def test_exactly_one_source(self):
        with pytest.raises(ValueError):
            ChannelConfig(epsilon=0.1, ebn0_db=0.0)
        with pytest.raises(ValueError):
            ChannelConfig()

    def test_epsilon_range(self):
        assert ChannelConfig(epsilon=0.5).crossover() == 0.5
        assert ChannelConfig(epsilon=0.0).crossover() == 0.0
        with pytest.raises(ValueError):
            ChannelConfig(epsilon=0.51)
        with pytest.raises(ValueError):
            ChannelConfig(epsilon=-0.01)

    def test_ebn0_resolution(self):
        cfg = ChannelConfig(ebn0_db=0.0)
        assert cfg.crossover() == pytest.approx(0.0227501319481792072, rel=1e-12)
        assert ChannelConfig(ebn0_db=float("-inf")).crossover() == 0.5


class TestTransmit:
    def test_identity_at_zero(self):
        bits = SeededRng(0).bernoulli(np.full(500, 0.4))
        out = transmit(bits, 0.0, SeededRng(1))
        np.testing.assert_array_equal(out, bits)

    def test_complement_at_one(self):
        bits = SeededRng(0).bernoulli(np.full(500, 0.4))
        out = transmit(bits, 1.0, SeededRng(1))
        np.testing.assert_array_equal(out, 1 - bits)

    def test_flip_rate_within_three_sigma(self):
        n = 1_000_000
        eps = 0.1
        bits = np.zeros(n, dtype=np.uint8)
        out = transmit(bits, eps, SeededRng(123))
        rate = out.mean()
        sigma = math.sqrt(eps * (1 - eps) / n)
        assert abs(rate - eps) < 3 * sigma

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            transmit(np.zeros(3, dtype=np.uint8), 1.5, SeededRng(0))


class TestNoisySpikeProb:
    def test_printed_value(self):
        assert noisy_spike_prob(0.8, 0.1) == pytest.approx(0.74, rel=1e-15)

    def test_epsilon_zero_identity(self):
        ps = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(noisy_spike_prob(ps, 0.0), ps)

    def test_half_epsilon_is_constant_half(self):
        ps = np.linspace(0, 1, 11)
        np.testing.assert_allclose(noisy_spike_prob(ps, 0.5), 0.5, rtol=0, atol=1e-16)

    def test_matches_two_term_marginalization_exactly(self):
        # sum over the transmitted bit z of P(z) * P(received = 1 | z),
        # computed term by term; equality must be exact, not approximate
        rng = np.random.default_rng(5)
        for p in rng.random(200):
            for eps in (0.0, 0.1, 0.25, 0.4, 0.5):
                direct = noisy_spike_prob(p, eps)
                marginal = p * (1.0 - eps) + (1.0 - p) * eps
                assert direct == marginal

    def test_range_bound(self):
        for eps in (0.0, 0.2, 0.5):
            qs = noisy_spike_prob(np.linspace(0, 1, 101), eps)
            assert qs.min() >= min(eps, 1 - eps)
            assert qs.max() <= max(eps, 1 - eps)


class TestLogProbNoisy:
    def test_reduces_to_clean_at_zero(self):
        rng = SeededRng(2)
        u = rng.generator.normal(size=6)
        bits = rng.bernoulli(np.full(6, 0.5))
        assert log_prob_noisy(bits, u, 0.0) == log_prob_clean(bits, u)

    def test_single_bit_value(self):
        # u = 0, eps = 0.1: marginal spike probability is exactly 0.5
        assert log_prob_noisy(np.array([1]), np.array([0.0]), 0.1) == pytest.approx(
            math.log(0.5), rel=1e-15
        )

    def test_clean_log_prob_frozen_value(self):
        # sigmoid(ln 3) = 0.75 exactly; frozen log(0.75)
        u = np.array([math.log(3.0)])
        assert log_prob_clean(np.array([1]), u) == pytest.approx(
            -0.28768207245178092744, rel=1e-14
        )

    def test_saturated_potentials_stay_finite(self):
        u = np.array([750.0, -750.0])
        bits = np.array([0, 1])
        assert math.isfinite(log_prob_clean(bits, u))
        assert math.isfinite(log_prob_noisy(bits, u, 0.0))
        assert math.isfinite(log_prob_noisy(bits, u, 0.3))

    @pytest.mark.parametrize("eps", [0.0, 0.1, 0.25, 0.4])
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_normalization_over_all_outcomes(self, eps, k):
        rng = np.random.default_rng(17)
        for _ in range(5):
            u = rng.normal(scale=2.0, size=k)
            total = sum(
                math.exp(log_prob_noisy(np.array(bits), u, eps))
                for bits in itertools.product((0, 1), repeat=k)
            )
            assert total == pytest.approx(1.0, abs=1e-12)


class TestSampleNoisy:
    def test_extreme_potentials_at_zero_epsilon(self):
        rng = SeededRng(3)
        u = np.array([1e6, -1e6])
        out = sample_noisy(u, 0.0, rng)
        np.testing.assert_array_equal(out, [1, 0])

    def test_epsilon_half_is_fair_coin_regardless_of_u(self):
        rng = SeededRng(4)
        u = np.full(200_000, 50.0)
        draws = sample_noisy(u, 0.5, rng)
        assert abs(draws.mean() - 0.5) < 5 * math.sqrt(0.25 / 200_000)

    def test_matches_two_stage_law_chi_square(self):
        # k = 2, u = (0, 1), eps = 0.2: compare empirical outcome counts of
        # the direct draw against sample-then-flip, 1e5 draws each
        n = 100_000
        u = np.array([0.0, 1.0])
        eps = 0.2
        direct_rng = SeededRng(100)
        stage_rng = SeededRng(200)
        direct = np.zeros((n, 2), dtype=np.uint8)
        staged = np.zeros((n, 2), dtype=np.uint8)
        for i in range(n):
            direct[i] = sample_noisy(u, eps, direct_rng)
        spikes = stage_rng.bernoulli(np.tile(sigmoid(u), (n, 1)))
        staged = transmit(spikes, eps, stage_rng)
        codes = direct[:, 0] * 2 + direct[:, 1]
        codes2 = staged[:, 0] * 2 + staged[:, 1]
        obs1 = np.bincount(codes, minlength=4).astype(float)
        obs2 = np.bincount(codes2, minlength=4).astype(float)
        # two-sample homogeneity chi-square, 3 degrees of freedom
        pooled = (obs1 + obs2) / (2 * n)
        stat = np.sum((obs1 - n * pooled) ** 2 / (n * pooled)) + np.sum(
            (obs2 - n * pooled) ** 2 / (n * pooled)
        )
        assert stat < CHI2_99_DF3
