import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from relaxsum.control_variate import ControlVariate
from relaxsum.coverage_reward import DocumentSet, RewardConfig
from relaxsum.estimators import (
    EnumerationBudgetError, EstimationTask, EstimatorStats, draw_noise, estimator_statistics,
    exact_gradient_oracle, fit_control_variate, reinforce_batch, reinforce_estimate, relax_batch, relax_estimate,
)
from relaxsum.gumbel import TemperatureParam
from relaxsum.policy import GUMBEL, ToyPolicy
from relaxsum.toy import toy_problem


@pytest.fixture
def prob():
    return toy_problem()


@pytest.fixture
def cv():
    return ControlVariate(3, 8, 2, rng=np.random.default_rng(5))


def constant_reward(monkeypatch, value):
    monkeypatch.setattr(EstimationTask, "rewards", lambda self, ro: np.full(ro.tokens.shape[0], float(value)))


class TestReinforce:
    def test_zero_reward_zero_gradient(self, prob, monkeypatch):
        constant_reward(monkeypatch, 0.0)
        u, _ = draw_noise(range(50), 2, 3)
        g, _, _ = reinforce_batch(prob.policy, prob.task(), u)
        assert not g.any()

    def test_constant_reward_mean_zero(self, prob, monkeypatch):
        constant_reward(monkeypatch, 2.5)
        s = estimator_statistics("REINFORCE", 100_000, prob.policy, prob.task())
        assert np.all(np.abs(s.mean) <= 3 * s.se + 1e-12)

    def test_single_call_matches_batch_row(self, prob):
        est = reinforce_estimate(prob.policy, prob.x, prob.ref, prob.docs, prob.reward_cfg, 17, max_len=2)
        u, _ = draw_noise([16, 17], 2, 3)
        g, _, _ = reinforce_batch(prob.policy, prob.task(), u)
        np.testing.assert_array_equal(est.grad_theta, g[1])
        assert est.sample_id == 17 and len(est.sequence) == 2

    def test_empty_reference(self, prob):
        with pytest.raises(ValueError, match="empty reference"):
            reinforce_estimate(prob.policy, prob.x, (), prob.docs, prob.reward_cfg, 0)


class TestRelax:
    def test_zero_control_variate_is_reinforce(self, prob, cv):
        cv.zero_output = True
        u, v = draw_noise(range(200), 2, 3)
        task = prob.task()
        res = relax_batch(prob.policy, cv, TemperatureParam(), task, u, v)
        g, _, _ = reinforce_batch(prob.policy, task, u, GUMBEL)
        np.testing.assert_allclose(res.grad_theta, g, atol=1e-14)

    def test_single_call_matches_batch_row(self, prob, cv):
        temp = TemperatureParam()
        est = relax_estimate(prob.policy, cv, temp, prob.x, prob.ref, prob.docs, prob.reward_cfg, 5, max_len=2)
        u, v = draw_noise([4, 5], 2, 3)
        res = relax_batch(prob.policy, cv, temp, prob.task(), u, v)
        np.testing.assert_allclose(est.grad_theta, res.grad_theta[1], atol=1e-14)

    def test_prefix_term_vanishes_for_one_step(self, cv):
        p = toy_problem(max_len=1)
        cv1 = ControlVariate(3, 8, 1, rng=np.random.default_rng(5))
        u, v = draw_noise(range(100), 1, 3)
        a = relax_batch(p.policy, cv1, TemperatureParam(), p.task(), u, v, prefix_score=True)
        b = relax_batch(p.policy, cv1, TemperatureParam(), p.task(), u, v, prefix_score=False)
        np.testing.assert_allclose(a.ghat, b.ghat, atol=1e-14)

    def test_phi_gradient_matches_fd(self, prob, cv):
        u, v = draw_noise(range(40), 2, 3)
        task, temp = prob.task(), TemperatureParam()

        def second_moment():
            g = relax_batch(prob.policy, cv, temp, task, u, v).ghat
            return (g ** 2).sum(axis=1).mean()

        got = relax_batch(prob.policy, cv, temp, task, u, v, want_phi=True).grad_phi
        fd = np.zeros(cv.size)
        h = 1e-6
        for i in range(cv.size):
            old = cv.params.data[i]
            cv.params.data[i] = old + h
            up = second_moment()
            cv.params.data[i] = old - h
            down = second_moment()
            cv.params.data[i] = old
            fd[i] = (up - down) / (2 * h)
        assert np.linalg.norm(got - fd) / np.linalg.norm(fd) < 1e-4

    def test_log_tau_gradient_matches_fd(self, prob, cv):
        u, v = draw_noise(range(40), 2, 3)
        task = prob.task()

        def second_moment(lt):
            g = relax_batch(prob.policy, cv, TemperatureParam(lt), task, u, v).ghat
            return (g ** 2).sum(axis=1).mean()

        got = relax_batch(prob.policy, cv, TemperatureParam(0.2), task, u, v, want_tau=True).grad_log_tau
        # small step: the second moment has ReLU kinks in log tau a few 1e-3 apart
        fd = (second_moment(0.2 + 1e-6) - second_moment(0.2 - 1e-6)) / 2e-6
        assert got == pytest.approx(fd, rel=1e-4)

    def test_fitting_lowers_second_moment(self, prob, cv):
        trace = fit_control_variate(prob.policy, cv, TemperatureParam(), prob.task(), steps=300, batch=32)
        assert np.mean(trace[-50:]) < np.mean(trace[:50])


class TestOracle:
    def indicator_problem(self):
        pol = ToyPolicy(2, 1, 1, bos_id=0, eos_id=None)
        pol.params["c"] = np.log([0.6, 0.4])
        # token 1 covers both documents as evenly as the reference, so only ROUGE-L differs
        return pol, (0,), DocumentSet(((0, 1), (0, 1)))

    def test_indicator_reward_derivative(self):
        pol, ref, docs = self.indicator_problem()
        res = exact_gradient_oracle(pol, (0, 1), ref, docs, RewardConfig(), 1)
        g = pol.params.view(res.gradient)["c"]
        np.testing.assert_allclose(g, [0.24, -0.24], atol=1e-12)
        assert res.expected_reward == pytest.approx(0.6)

    def test_constant_reward_zero_gradient(self, prob, monkeypatch):
        monkeypatch.setattr(EstimationTask, "reward",
                            lambda self, seq: type("R", (), {"combined": 1.7})())
        res = exact_gradient_oracle(prob.policy, prob.x, prob.ref, prob.docs, prob.reward_cfg, 2)
        np.testing.assert_allclose(res.gradient, 0.0, atol=1e-12)

    def test_total_mass(self, prob):
        res = exact_gradient_oracle(prob.policy, prob.x, prob.ref, prob.docs, prob.reward_cfg, 2)
        assert abs(res.total_mass - 1.0) < 1e-9 and res.n_sequences == 9

    def test_budget(self):
        p = toy_problem(vocab_size=12, max_len=6)
        with pytest.raises(EnumerationBudgetError) as err:
            exact_gradient_oracle(p.policy, p.x, p.ref, p.docs, p.reward_cfg, 6)
        assert err.value.required == 12 ** 6

    def test_requires_forced_length(self):
        pol = ToyPolicy(3, 2, 2, bos_id=0, eos_id=2)
        with pytest.raises(ValueError):
            exact_gradient_oracle(pol, (0,), (0,), DocumentSet(((0,),)), RewardConfig(), 1)


class TestStatistics:
    def test_identical_seeds_rejected(self, prob):
        with pytest.raises(ValueError, match="seeds must be distinct"):
            estimator_statistics("REINFORCE", 2, prob.policy, prob.task(), seeds=[3, 3])

    def test_needs_two(self, prob):
        with pytest.raises(ValueError):
            estimator_statistics("REINFORCE", 1, prob.policy, prob.task())

    def test_relax_needs_cv(self, prob):
        with pytest.raises(ValueError):
            estimator_statistics("RELAX", 10, prob.policy, prob.task())

    def test_standard_error_scaling(self, prob):
        a = estimator_statistics("REINFORCE", 20_000, prob.policy, prob.task(), rng_base=0)
        b = estimator_statistics("REINFORCE", 40_000, prob.policy, prob.task(), rng_base=0)
        ratio = a.se / b.se
        assert np.median(ratio) == pytest.approx(np.sqrt(2), rel=0.05)

    def test_reinforce_unbiased(self, prob):
        orc = exact_gradient_oracle(prob.policy, prob.x, prob.ref, prob.docs, prob.reward_cfg, 2)
        s = estimator_statistics("REINFORCE", 50_000, prob.policy, prob.task(), rng_base=777, oracle=orc.gradient)
        assert np.all(np.abs(s.bias) <= 3 * s.se)

    def test_chunking_is_invisible(self, prob):
        a = estimator_statistics("REINFORCE", 3000, prob.policy, prob.task(), chunk=3000)
        b = estimator_statistics("REINFORCE", 3000, prob.policy, prob.task(), chunk=700)
        np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(a.variance, b.variance, rtol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.just(3)), elements=st.floats(-1e3, 1e3)),
           st.integers(1, 29))
    def test_merge_equals_pooled(self, x, cut):
        cut = min(cut, x.shape[0] - 1)
        merged = EstimatorStats.from_samples(x[:cut]).merge(EstimatorStats.from_samples(x[cut:]))
        pooled = EstimatorStats.from_samples(x)
        np.testing.assert_allclose(merged.mean, pooled.mean, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(merged.m2, pooled.m2, rtol=1e-7, atol=1e-6)
