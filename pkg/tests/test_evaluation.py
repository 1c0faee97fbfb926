"""Bound accounting: KL factorization, Monte Carlo score term, report identities."""

import itertools

import numpy as np
import pytest

from markov_bridge import (
    ElboReport,
    FactorizedRateMatrix,
    NoiseSchedule,
    ProbVector,
    ProductDistribution,
    elbo_estimate,
    evolve,
    kl_term,
    oracle_ratio_fn,
    transition_kernel,
)
from markov_bridge.core import kl_divergence, materialize_dense

from oracles import joint_kernel_row, kl_brute, reverse_marginal_dense

LN2 = np.log(2.0)
SCHEDULE_UNIT = NoiseSchedule(sigma_min=1.0, sigma_max=1.0, horizon=1.0)


class TestKlTerm:
    def test_zero_when_rows_equal_terminal(self):
        Q = [FactorizedRateMatrix.with_identity_perm([LN2])]
        row = transition_kernel(Q[0], 1.0)[0]
        terminal = ProductDistribution.from_array(row[None, :])
        assert kl_term((0,), Q, SCHEDULE_UNIT, terminal) == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        Q = [FactorizedRateMatrix.with_identity_perm([LN2])]
        terminal = ProductDistribution.from_array([[0.25, 0.75]])
        val = kl_term((0,), Q, SCHEDULE_UNIT, terminal)
        assert val == pytest.approx(0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0), abs=1e-12)

    def test_identical_dims_double(self):
        Q1 = [FactorizedRateMatrix.with_identity_perm([LN2])]
        Q2 = Q1 * 2
        t1 = ProductDistribution.from_array([[0.25, 0.75]])
        t2 = ProductDistribution.from_array([[0.25, 0.75]] * 2)
        assert kl_term((0, 0), Q2, SCHEDULE_UNIT, t2) == pytest.approx(
            2.0 * kl_term((0,), Q1, SCHEDULE_UNIT, t1), rel=1e-12
        )

    def test_joint_enumeration_matches_per_dim_sum(self):
        # exhaustive check at n=3, d=2: KL over all 9 joint outcomes equals
        # the sum of the two marginal KLs
        rng = np.random.default_rng(503)
        for _ in range(20):
            Qs = [
                FactorizedRateMatrix.from_parts(rng.permutation(3), rng.uniform(0.1, 2.0, 2))
                for _ in range(2)
            ]
            terminal = ProductDistribution.from_array(
                rng.dirichlet(np.ones(3), size=2) * 0.9 + 0.1 / 3
            )
            x0 = tuple(rng.integers(0, 3, size=2))
            beta_T = SCHEDULE_UNIT.beta(1.0)
            rows = [transition_kernel(Qs[i], beta_T)[x0[i]] for i in range(2)]
            joint_row = joint_kernel_row(rows)
            joint_terminal = joint_kernel_row([m.probs for m in terminal.marginals])
            joint_kl = kl_brute(joint_row, joint_terminal)
            per_dim = kl_term(x0, Qs, SCHEDULE_UNIT, terminal)
            assert abs(joint_kl - per_dim) <= 1e-12


def point_mass_dataset(n, value, size, d=1):
    return np.full((size, d), value, dtype=np.int64)


class TestElboEstimate:
    def test_oracle_score_term_statistically_zero(self):
        # point-mass data: the oracle equals the conditional ratio, so the
        # score integrand vanishes pointwise
        rng = np.random.default_rng(509)
        n = 5
        Q = [FactorizedRateMatrix.from_parts(rng.permutation(n), rng.uniform(0.3, 1.5, n - 1))]
        mu_row = np.zeros(n)
        mu_row[2] = 1.0
        mu = ProductDistribution.from_array(mu_row[None, :])
        data = point_mass_dataset(n, 2, 64)
        terminal = ProductDistribution.from_array(
            evolve(mu.marginals[0].probs, Q[0], SCHEDULE_UNIT.beta(1.0))[None, :] * (1 - n * 1e-9) + 1e-9
        )
        report = elbo_estimate(
            oracle_ratio_fn(mu, Q, SCHEDULE_UNIT), data, Q, SCHEDULE_UNIT, terminal, 2048, rng
        )
        assert report.j_score <= max(3.0 * report.mc_std_error, 1e-10)

    def test_frozen_identity_chain_total_zero(self):
        n = 4
        Q = [FactorizedRateMatrix.with_identity_perm(np.zeros(n - 1))]
        data = point_mass_dataset(n, 1, 32)
        one_hot = np.zeros(n)
        one_hot[1] = 1.0
        terminal = ProductDistribution.from_array(one_hot[None, :])
        uniform_ratios = lambda xt, t: np.ones((xt.shape[0], 1, n))
        report = elbo_estimate(uniform_ratios, data, Q, SCHEDULE_UNIT, terminal, 512, np.random.default_rng(1))
        assert report.total_nats == pytest.approx(0.0, abs=1e-12)

    def test_std_error_scaling(self):
        rng_sys = np.random.default_rng(521)
        n = 4
        Q = [FactorizedRateMatrix.from_parts(rng_sys.permutation(n), rng_sys.uniform(0.3, 1.5, n - 1))]
        mu = ProductDistribution.from_array(rng_sys.dirichlet(np.ones(n), size=1) * 0.8 + 0.2 / n)
        data = rng_sys.choice(n, size=(4096, 1), p=mu.marginals[0].probs).astype(np.int64)
        terminal = ProductDistribution.uniform(n, 1)
        model = lambda xt, t: np.ones((xt.shape[0], 1, n))  # fixed imperfect scorer
        # keep the time window away from 0 where the integrand grows heavy
        # tails that would need far more samples for a stable variance
        r1 = elbo_estimate(model, data, Q, SCHEDULE_UNIT, terminal, 20000, np.random.default_rng(3), eps_t=0.3)
        r2 = elbo_estimate(model, data, Q, SCHEDULE_UNIT, terminal, 40000, np.random.default_rng(4), eps_t=0.3)
        ratio = r1.mc_std_error / r2.mc_std_error
        assert 0.8 * np.sqrt(2.0) <= ratio <= 1.2 * np.sqrt(2.0)

    def test_report_identities_and_finiteness(self):
        rng = np.random.default_rng(523)
        n, d = 3, 2
        Qs = [FactorizedRateMatrix.from_parts(rng.permutation(n), rng.uniform(0.2, 1.0, 2)) for _ in range(d)]
        data = rng.integers(0, n, size=(128, d))
        terminal = ProductDistribution.uniform(n, d)
        model = lambda xt, t: np.ones((xt.shape[0], d, n))
        report = elbo_estimate(model, data, Qs, SCHEDULE_UNIT, terminal, 1024, rng)
        assert report.total_nats == report.j_score + report.kl_term
        assert report.bits_per_dim == pytest.approx(report.total_nats / (d * LN2), rel=1e-15)
        for field in (report.j_score, report.kl_term, report.total_nats, report.bits_per_dim, report.mc_std_error):
            assert np.isfinite(field)

    def test_bound_dominates_exact_reverse_nll(self):
        # enumerable toy: reverse marginals by dense per-step products with
        # exact marginal ratios; the estimated bound must not undercut the
        # reverse process's exact NLL (3 sigma band on the MC side)
        rng = np.random.default_rng(541)
        n, d = 3, 2
        schedule = NoiseSchedule(sigma_min=0.2, sigma_max=4.0, horizon=1.0)
        eps_t = 1e-3
        mu = ProductDistribution.from_array(rng.dirichlet(2 * np.ones(n), size=d) * 0.8 + 0.2 / n)
        Qs = [FactorizedRateMatrix.from_parts(rng.permutation(n), rng.uniform(0.3, 1.2, n - 1)) for _ in range(d)]
        data = np.stack(
            [rng.choice(n, size=20000, p=mu.marginals[i].probs) for i in range(d)], axis=1
        ).astype(np.int64)
        terminal = ProductDistribution(
            tuple(evolve(mu.marginals[i], Qs[i], schedule.beta(1.0)) for i in range(d))
        )
        report = elbo_estimate(
            oracle_ratio_fn(mu, Qs, schedule), data, Qs, schedule, terminal, 20000, rng, eps_t=eps_t
        )
        nll = 0.0
        for i in range(d):
            pt_of = lambda t, i=i: evolve(mu.marginals[i].probs, Qs[i], schedule.beta(t))

            def ratio_matrix(t, i=i):
                pt = pt_of(t)
                return pt[None, :] / pt[:, None]

            p0_rev = reverse_marginal_dense(
                terminal.marginals[i].probs, materialize_dense(Qs[i]), schedule, eps_t, 6000, ratio_matrix
            )
            weights = np.bincount(data[:, i], minlength=n) / data.shape[0]
            nll += float(-(weights @ np.log(np.maximum(p0_rev, 1e-300))))
        assert report.total_nats >= nll - 3.0 * report.mc_std_error
        # and the oracle bound should sit close to that NLL, not far above it
        assert report.total_nats <= nll + 0.1


class TestElboReportType:
    def test_nonfinite_rejected(self):
        from markov_bridge import DivergenceError

        with pytest.raises(DivergenceError):
            ElboReport(j_score=np.nan, kl_term=0.0, total_nats=np.nan, bits_per_dim=0.0, mc_std_error=0.0)
