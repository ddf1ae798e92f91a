import logging

import numpy as np
import pytest

import config
from core.choice import LogBarrier, PerturbationModel
from core.design import stationary_cost
from core.learning import (
    chebyshev_interval,
    cost_upper_bound,
    expected_reward,
    invert_mu,
    min_beta_bar,
    point_mu,
    simulate_survey,
    survey_net_reward,
    survey_schedule,
)
from models.errors import ContractError, DomainError, InversionError, ParameterError
from models.schemas import ExpectationInterval, SurveyConfig

NET = np.array([2.0, 0.0])


def _point_interval(value):
    return ExpectationInterval(mean=value, epsilon=0.0, lower=value, upper=value, samples=1, confidence=0.95)


def test_expected_reward_closed_form(logit):
    assert expected_reward(1.0, NET, logit) == pytest.approx(2.0 / (1.0 + np.exp(-2.0)))
    assert expected_reward(1e3, NET, logit) == pytest.approx(1.0, abs=1e-3)


def test_expected_reward_decreases_in_mu(logit):
    values = [expected_reward(mu, NET, logit) for mu in np.linspace(0.1, 10.0, 20)]
    assert np.all(np.diff(values) < 0)


@pytest.mark.parametrize("base", [PerturbationModel.logit(1.0, 2), PerturbationModel(LogBarrier(2), 1.0)])
def test_expected_reward_decreases_over_a_wide_noise_range(base):
    values = [expected_reward(mu, NET, base) for mu in np.geomspace(0.05, 20.0, 25)]
    assert np.all(np.diff(values) < 0)


def test_default_survey_reward(ep):
    assert survey_net_reward(SurveyConfig(), 2) == pytest.approx(NET)


def test_explicit_survey_reward_is_rescaled(ep, caplog):
    with caplog.at_level(logging.WARNING, logger="core.learning"):
        net = survey_net_reward(SurveyConfig(r=[4.2, 0.0]), 2, ep)
    assert np.ptp(net) == pytest.approx(2.0)
    assert "rescaled" in caplog.text
    with pytest.raises(ParameterError):
        survey_net_reward(SurveyConfig(r=[4.2, 0.0]), 2)


def test_survey_sample_mean(logit):
    answers = simulate_survey(1.0, SurveyConfig(respondents=1_000_000, seed=4), logit)
    assert set(np.unique(answers)) <= {0.0, 2.0}
    assert answers.mean() == pytest.approx(1.7616, abs=0.005)


def test_survey_is_reproducible(logit):
    cfg = SurveyConfig(respondents=500, seed=17)
    assert np.array_equal(simulate_survey(2.0, cfg, logit), simulate_survey(2.0, cfg, logit))


def test_survey_rejects_nonpositive_noise(logit):
    with pytest.raises(ParameterError):
        simulate_survey(0.0, SurveyConfig(), logit)


def test_chebyshev_half_width():
    interval = chebyshev_interval(np.full(1000, 2.0), 0.95)
    assert interval.epsilon == pytest.approx(1.0 / np.sqrt(50.0))
    assert interval.lower == pytest.approx(2.0 - interval.epsilon)


def test_chebyshev_sample_size_for_the_accuracy_target():
    assert chebyshev_interval(np.zeros(8000), 0.95).epsilon == pytest.approx(0.05)


def test_chebyshev_contract():
    with pytest.raises(ParameterError):
        chebyshev_interval([], 0.95)
    with pytest.raises(ParameterError):
        chebyshev_interval([0.0, 1.0], 1.0)
    with pytest.raises(ContractError):
        chebyshev_interval([0.0, 2.5], 0.95)


def test_inverting_an_exact_expectation_recovers_mu(logit):
    mu = invert_mu(_point_interval(expected_reward(1.0, NET, logit)), NET, logit)
    assert mu.mu_lower == pytest.approx(1.0, abs=1e-5)
    assert mu.mu_upper == pytest.approx(1.0, abs=1e-5)
    assert not (mu.clipped_lower or mu.clipped_upper)


def test_survey_interval_covers_the_true_mu(logit):
    answers = simulate_survey(1.5, SurveyConfig(respondents=8000, seed=2), logit)
    mu = invert_mu(chebyshev_interval(answers, 0.95), NET, logit)
    assert mu.mu_lower <= 1.5 <= mu.mu_upper


def test_mu_interval_narrows_as_answers_pool(logit):
    mean = expected_reward(1.0, NET, logit)
    previous = None
    for samples in (1000, 2000, 4000, 8000, 16000):
        epsilon = 1.0 / np.sqrt(0.05 * samples)
        interval = ExpectationInterval(
            mean=mean, epsilon=epsilon, lower=mean - epsilon, upper=mean + epsilon, samples=samples, confidence=0.95
        )
        mu = invert_mu(interval, NET, logit)
        assert mu.mu_lower < 1.0 < mu.mu_upper
        if previous is not None:
            assert previous.mu_lower < mu.mu_lower
            assert mu.mu_upper < previous.mu_upper
        previous = mu


@pytest.mark.slow
def test_interval_covers_the_true_mu_across_replications(logit):
    replications = 500
    covered = 0
    for seed in range(replications):
        answers = simulate_survey(1.0, SurveyConfig(respondents=8000, seed=seed), logit)
        mu = invert_mu(chebyshev_interval(answers, 0.95), NET, logit)
        covered += mu.mu_lower <= 1.0 <= mu.mu_upper
    assert covered / replications >= 0.93


def test_inversion_clips_at_the_search_range(logit):
    interval = ExpectationInterval(mean=1.95, epsilon=0.1, lower=1.85, upper=2.05, samples=100, confidence=0.95)
    mu = invert_mu(interval, NET, logit)
    assert mu.clipped_lower and not mu.clipped_upper
    assert mu.mu_lower == config.MU_MIN
    assert mu.mu_upper > mu.mu_lower


def test_inversion_fails_outside_the_reachable_range(logit):
    interval = ExpectationInterval(mean=2.15, epsilon=0.05, lower=2.1, upper=2.2, samples=100, confidence=0.95)
    with pytest.raises(InversionError):
        invert_mu(interval, NET, logit)


def test_point_estimate(logit):
    assert point_mu(expected_reward(0.7, NET, logit), NET, logit) == pytest.approx(0.7, rel=1e-6)
    assert point_mu(2.0, NET, logit) == config.MU_MIN
    assert point_mu(0.5, NET, logit) == config.MU_MAX


def test_inversion_with_a_log_barrier_base():
    base = PerturbationModel(LogBarrier(2), 1.0)
    mu = invert_mu(_point_interval(expected_reward(0.4, NET, base)), NET, base)
    assert mu.mu_lower == pytest.approx(0.4, rel=1e-5)


def test_cost_bound_through_the_budget_design(ep, logit):
    bound = cost_upper_bound(0.1691, 1.0, ep, logit)
    assert bound.lam < 0
    assert bound.value == pytest.approx(0.15, abs=0.003)


def test_cost_bound_is_tight_at_the_true_mu(ep):
    for mu in (0.5, 1.0, 2.0):
        model = PerturbationModel.logit(mu, 2)
        for beta_bar in (0.155, 0.1691):
            bound = cost_upper_bound(beta_bar, mu, ep, model, tol=1e-12).value
            true = stationary_cost(beta_bar, list(ep.c_tilde), ep, model, tol=1e-12)
            assert bound == pytest.approx(true, abs=1e-6)


def test_cost_bound_dominates_the_true_cost(ep):
    mus = [0.5, 1.0, 2.0, 3.0, 5.0]
    for mu in mus:
        model = PerturbationModel.logit(mu, 2)
        for mu_upper in mus:
            if mu_upper < mu:
                continue
            for beta_bar in np.linspace(0.151, 0.1695, 10):
                bound = cost_upper_bound(beta_bar, mu_upper, ep, model, tol=1e-12).value
                true = stationary_cost(beta_bar, list(ep.c_tilde), ep, model, tol=1e-12)
                assert bound - true >= -1e-8


def test_cost_bound_domain(ep, logit):
    with pytest.raises(DomainError):
        cost_upper_bound(0.171, 1.0, ep, logit)
    with pytest.raises(DomainError):
        cost_upper_bound(0.15, 1.0, ep, logit)
    with pytest.raises(ParameterError):
        cost_upper_bound(0.16, 0.0, ep, logit)


def test_min_beta_bar_exhausts_the_budget(ep, logit):
    beta_min = min_beta_bar(5.0, 1.0, ep, logit)
    assert ep.beta_vec[0] < beta_min < 0.17
    assert beta_min == pytest.approx(0.167, abs=0.002)
    assert cost_upper_bound(beta_min, 5.0, ep, logit).value == pytest.approx(1.0, abs=1e-5)
    assert cost_upper_bound(beta_min + 1e-3, 5.0, ep, logit).value < 1.0


def test_min_beta_bar_grows_with_the_noise_ceiling(ep, logit):
    values = [min_beta_bar(mu_upper, 1.0, ep, logit) for mu_upper in (1.0, 2.0, 3.0, 4.0, 5.0)]
    assert np.all(np.diff(values) > 0)
    assert values[0] == pytest.approx(0.1598, abs=5e-4)


def test_min_beta_bar_needs_a_budget_above_the_free_spend(ep, logit):
    with pytest.raises(DomainError):
        min_beta_bar(5.0, 0.05, ep, logit)


def test_schedule_reaches_the_accuracy_gate_on_the_eighth_wave(logit):
    cfg = SurveyConfig(respondents=1000, waves=8, cadence_days=30.0, seed=3)
    waves, t0 = survey_schedule(1.0, cfg, logit, accuracy=0.05)
    assert t0 == pytest.approx(240.0)
    assert [w.t for w in waves] == pytest.approx([30.0 * k for k in range(1, 9)])
    assert [w.expectation.samples for w in waves] == [1000 * k for k in range(1, 9)]
    assert waves[-1].mu_hat == pytest.approx(1.0, abs=0.1)
    assert waves[-1].mu.mu_lower <= waves[-1].mu_hat <= waves[-1].mu.mu_upper
    assert np.all(np.diff([w.expectation.epsilon for w in waves]) < 0)
    widths = [w.mu.mu_upper - w.mu.mu_lower for w in waves]
    assert widths[-1] < widths[0]


def test_schedule_without_reaching_the_gate(logit):
    cfg = SurveyConfig(respondents=1000, waves=3, seed=3)
    waves, t0 = survey_schedule(1.0, cfg, logit, accuracy=0.01, t_start=100.0)
    assert t0 is None
    assert waves[0].t == pytest.approx(130.0)


def test_schedule_is_reproducible(logit):
    cfg = SurveyConfig(respondents=200, waves=2, seed=9)
    first, _ = survey_schedule(2.0, cfg, logit, accuracy=0.05)
    second, _ = survey_schedule(2.0, cfg, logit, accuracy=0.05)
    assert [w.mu_hat for w in first] == [w.mu_hat for w in second]
