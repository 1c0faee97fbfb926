"""Reverse Euler sampling, the mu estimator, and the TV metric."""

import numpy as np
import pytest

from markov_bridge import (
    FactorizedRateMatrix,
    NoiseSchedule,
    ProbVector,
    ProductDistribution,
    SamplerConfig,
    estimate_mu,
    euler_reverse_step,
    evolve,
    generate,
    oracle_ratio_fn,
    tv_distance,
)
from markov_bridge.data import synthetic_ground_truth
from markov_bridge.matrix_learning import MatrixLearnState, predict_terminal
from markov_bridge.sampler import _euler_probs
from markov_bridge.solver import exact_rate_matrix

SCHEDULE_UNIT = NoiseSchedule(sigma_min=1.0, sigma_max=1.0, horizon=1.0)


def oracle_system(rng, n, sigma_max=10.0):
    """Ground-truth factorized system: mu, bridged Q, horizon terminal."""
    mu = ProductDistribution.from_array(
        rng.dirichlet(2 * np.ones(n), size=1) * 0.8 + 0.2 / n
    )
    schedule = NoiseSchedule(sigma_min=0.1, sigma_max=sigma_max, horizon=1.0)
    target = ProbVector(np.full(n, 1.0 / n))
    # bridge mu to uniform over the full horizon budget
    Q_unit = exact_rate_matrix(target, mu.marginals[0])
    Q = [Q_unit.replace_a(Q_unit.a / schedule.beta(1.0))]
    terminal = ProductDistribution(
        (evolve(mu.marginals[0], Q[0], schedule.beta(1.0)),)
    )
    return mu, Q, schedule, terminal


class TestSamplerConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(num_steps=0)
        with pytest.raises(ValueError):
            SamplerConfig(eps_t=0.0)
        with pytest.raises(ValueError):
            SamplerConfig(ratio_source="magic")


class TestEulerReverseStep:
    def test_dt_zero_returns_xt(self):
        rng = np.random.default_rng(401)
        Q = [FactorizedRateMatrix.with_identity_perm([1.0, 0.5])]
        for _ in range(10):
            xt = (int(rng.integers(0, 3)),)
            out = euler_reverse_step(xt, 0.5, 0.0, np.ones((1, 3)), Q, SCHEDULE_UNIT, rng)
            assert out == xt

    def test_two_state_move_probability(self):
        # reversed row at x=1 is (1, -1); dt = 0.1 moves with probability 0.1
        Q = [FactorizedRateMatrix.with_identity_perm([1.0])]
        moved = 0
        trials = 40000
        rng = np.random.default_rng(403)
        for _ in range(trials):
            out = euler_reverse_step((1,), 0.5, 0.1, np.ones((1, 2)), Q, SCHEDULE_UNIT, rng)
            moved += out[0] == 0
        assert abs(moved / trials - 0.1) <= 3.0 * np.sqrt(0.1 * 0.9 / trials)

    def test_zero_ratios_stay(self):
        rng = np.random.default_rng(407)
        Q = [FactorizedRateMatrix.with_identity_perm([1.0, 2.0])]
        ratios = np.zeros((1, 3))
        ratios[0, 1] = 1.0
        out = euler_reverse_step((1,), 0.7, 0.2, ratios, Q, SCHEDULE_UNIT, rng)
        assert out == (1,)

    def test_matches_batched_path(self):
        rng = np.random.default_rng(409)
        n, d = 5, 3
        Q = [
            FactorizedRateMatrix.from_parts(rng.permutation(n), rng.uniform(0.2, 2.0, n - 1))
            for _ in range(d)
        ]
        xt = rng.integers(0, n, size=(1, d))
        ratios = rng.uniform(0.1, 3.0, size=(1, d, n))
        probs = _euler_probs(xt, 0.6, 0.05, ratios, Q, SCHEDULE_UNIT)
        from markov_bridge.core import reverse_rate_row

        for i in range(d):
            x = int(xt[0, i])
            row = np.zeros(n)
            row[x] = 1.0
            row += 0.05 * reverse_rate_row(Q[i], SCHEDULE_UNIT.sigma(0.6), ratios[0, i], x)
            np.clip(row, 0.0, None, out=row)
            assert np.allclose(probs[0, i], row / row.sum(), atol=1e-14)

    def test_categoricals_are_valid(self):
        rng = np.random.default_rng(419)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            Q = [FactorizedRateMatrix.from_parts(rng.permutation(n), rng.uniform(0, 2, n - 1))]
            xt = rng.integers(0, n, size=(8, 1))
            ratios = rng.uniform(0.0, 4.0, size=(8, 1, n))
            probs = _euler_probs(xt, 0.8, rng.uniform(0.0, 0.5), ratios, Q, SCHEDULE_UNIT)
            assert probs.min() >= 0.0
            assert np.abs(probs.sum(axis=2) - 1.0).max() <= 1e-12


class TestGenerate:
    def test_tiny_step_budget_keeps_terminal(self):
        # one near-zero step: samples stay distributed as the terminal
        rng = np.random.default_rng(421)
        mu, Q, schedule, terminal = oracle_system(rng, 6)
        config = SamplerConfig(num_steps=1, eps_t=1.0 - 1e-9)
        draws = generate(config, terminal, Q, schedule, oracle_ratio_fn(mu, Q, schedule), rng, 20000)
        freq = np.bincount(draws[:, 0], minlength=6) / draws.shape[0]
        assert tv_distance(freq, terminal.marginals[0].probs) <= 0.02

    def test_fixed_seed_deterministic(self):
        rng_sys = np.random.default_rng(431)
        mu, Q, schedule, terminal = oracle_system(rng_sys, 5)
        config = SamplerConfig(num_steps=32, eps_t=1e-3)
        fn = oracle_ratio_fn(mu, Q, schedule)
        a = generate(config, terminal, Q, schedule, fn, np.random.default_rng(77), 500)
        b = generate(config, terminal, Q, schedule, fn, np.random.default_rng(77), 500)
        assert np.array_equal(a, b)

    def test_oracle_reversal_recovers_target(self):
        rng = np.random.default_rng(433)
        mu, Q, schedule, terminal = oracle_system(rng, 8)
        config = SamplerConfig(num_steps=128, eps_t=1e-3)
        draws = generate(config, terminal, Q, schedule, oracle_ratio_fn(mu, Q, schedule), rng, 20000)
        freq = np.bincount(draws[:, 0], minlength=8) / draws.shape[0]
        assert tv_distance(freq, mu.marginals[0].probs) <= 0.04


class TestEstimateMu:
    def test_single_trajectory_single_step(self):
        rng = np.random.default_rng(439)
        mu, Q, schedule, terminal = oracle_system(rng, 4)
        config = SamplerConfig(num_steps=1, eps_t=0.5)
        fn = oracle_ratio_fn(mu, Q, schedule)
        est = estimate_mu(config, terminal, Q, schedule, fn, np.random.default_rng(3), 1)
        # reproduce by hand: one terminal draw, one full categorical at t = T
        draw_rng = np.random.default_rng(3)
        xt = np.array([[np.searchsorted(np.cumsum(terminal.marginals[0].probs), draw_rng.random())]])
        probs = _euler_probs(xt, 1.0, 0.5, fn(xt, 1.0), Q, schedule)
        assert np.allclose(est.marginals[0].probs, probs[0, 0] / probs[0, 0].sum(), atol=1e-12)

    def test_frozen_chain_returns_terminal(self):
        terminal = ProductDistribution.from_array([[0.3, 0.2, 0.5]])
        Q = [FactorizedRateMatrix.with_identity_perm(np.zeros(2))]
        config = SamplerConfig(num_steps=8, eps_t=1e-3)
        uniform_ratios = lambda xt, t: np.ones((xt.shape[0], 1, 3))
        est = estimate_mu(config, terminal, Q, SCHEDULE_UNIT, uniform_ratios, np.random.default_rng(5), 4000)
        assert tv_distance(est.marginals[0], terminal.marginals[0]) <= 0.03

    def test_oracle_accuracy(self):
        rng = np.random.default_rng(443)
        mu, Q, schedule, terminal = oracle_system(rng, 8)
        config = SamplerConfig(num_steps=128, eps_t=1e-3)
        est = estimate_mu(config, terminal, Q, schedule, oracle_ratio_fn(mu, Q, schedule), rng, 4096)
        err = np.abs(est.marginals[0].probs - mu.marginals[0].probs).max()
        assert err <= 0.02

    def test_valid_product_distribution(self):
        rng = np.random.default_rng(449)
        truth = synthetic_ground_truth(5, 3, seed=1)
        Qs = [
            FactorizedRateMatrix.from_parts(rng.permutation(5), rng.uniform(0, 1.5, 4))
            for _ in range(3)
        ]
        state = MatrixLearnState(Q_per_dim=Qs, p0_estimate=truth)
        schedule = NoiseSchedule(sigma_min=0.1, sigma_max=6.0, horizon=1.0)
        terminal = predict_terminal(state, schedule)
        config = SamplerConfig(num_steps=16, eps_t=1e-3)
        fn = oracle_ratio_fn(truth, Qs, schedule)
        est = estimate_mu(config, terminal, Qs, schedule, fn, rng, 256)
        arr = est.as_array()
        assert arr.min() >= 0.0
        assert np.abs(arr.sum(axis=1) - 1.0).max() <= 1e-9


class TestTvDistance:
    def test_identical(self):
        assert tv_distance(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0

    def test_disjoint_point_masses(self):
        assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_quarter(self):
        assert tv_distance(np.array([0.25, 0.75]), np.array([0.5, 0.5])) == pytest.approx(0.25)

    def test_mismatched_shapes(self):
        with pytest.raises(ValueError):
            tv_distance(np.array([1.0]), np.array([0.5, 0.5]))
