import math

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from scbandit.errors import ConstraintViolation
from scbandit.links import logistic_link
from scbandit.model import EnvironmentParams, MessageCatalog, abandonment_probability, selection_probabilities
from scbandit.simulator import (
    ContextualEnvironment,
    FeatureBox,
    Terminal,
    outcome_counts,
    run_contextual_episode,
    run_episode,
    sample_features,
)
from scbandit.ucb import LearnerState

ALPHA = np.array([0.25, 0.5, 1.0, 0.8])


def counts(seq, u, q, n, seed, up_front=False):
    return outcome_counts(np.array(seq, dtype=np.int64), np.asarray(u, dtype=float), q,
                          np.random.default_rng(seed), n, up_front)


def test_near_certain_acceptance():
    c = counts([0, 1], [1 - 1e-12, 0.5], 0.9, 10**5, 0)
    assert c[0] / 10**5 >= 1 - 1e-9


def test_certain_abandonment():
    cat = MessageCatalog([1.0, 1.0, 1.0])
    env = EnvironmentParams([0.0, 0.0, 0.0], 1.0, 2.0)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        out = run_episode(cat, env, [0, 1, 2], rng)
        assert out.shown == (0,) and out.terminal is Terminal.ABANDONED and out.payoff == -2.0


def test_two_message_frequencies():
    n = 10**6
    c = counts([0, 1], [0.5, 0.5], 0.9, n, 2)
    np.testing.assert_allclose(c[:3] / n, [0.5, 0.225, 0.0725], atol=3e-3)


def test_exhausted_when_patient_and_picky():
    cat = MessageCatalog([1.0, 1.0])
    env = EnvironmentParams([0.0, 0.0], 0.0, 1.0)
    out = run_episode(cat, env, [1, 0], np.random.default_rng(0))
    assert out.terminal is Terminal.EXHAUSTED and out.shown == (1, 0) and out.payoff == 0.0
    assert out.skips == 2 and out.accepted is None


def test_lazy_and_up_front_patience_agree():
    seq, u, q, n = [2, 0, 1, 3], [0.1, 0.3, 0.05, 0.2], 0.7, 10**5
    table = np.vstack([counts(seq, u, q, n, 10), counts(seq, u, q, n, 11, up_front=True)])
    assert chi2_contingency(table).pvalue > 1e-3


def test_outcome_payoffs():
    cat = MessageCatalog([0.3, 0.8])
    env = EnvironmentParams([0.4, 0.4], 0.3, 0.5)
    rng = np.random.default_rng(4)
    for _ in range(500):
        out = run_episode(cat, env, [1, 0], rng)
        assert out.shown == (1, 0)[: len(out.shown)]
        if out.terminal is Terminal.ACCEPTED:
            assert out.payoff == cat.revenues[out.shown[-1]]
        elif out.terminal is Terminal.ABANDONED:
            assert out.payoff == -0.5
        else:
            assert out.payoff == 0.0


def test_same_seed_same_stream():
    cat = MessageCatalog(np.linspace(0.1, 1, 5))
    env = EnvironmentParams(np.linspace(0.05, 0.4, 5), 0.2, 0.5)
    runs = [[run_episode(cat, env, [4, 2, 0, 1], rng) for _ in range(200)]
            for rng in (np.random.default_rng(9), np.random.default_rng(9))]
    assert runs[0] == runs[1]


def test_feedback_accounting():
    cat = MessageCatalog(np.linspace(0.1, 1, 4))
    env = EnvironmentParams([0.1, 0.2, 0.15, 0.05], 0.25, 0.5)
    rng = np.random.default_rng(5)
    state = LearnerState.empty(4)
    skips = abandons = 0
    for _ in range(2000):
        out = run_episode(cat, env, [3, 1, 0, 2], rng)
        skips += out.skips
        abandons += out.abandons
        state.record(out)
    assert (state.n_e, state.n_a) == (skips, abandons)
    assert state.views.sum() == state.accepts.sum() + state.n_e + state.n_a


# ---- contextual

def make_ctx(betas=None, n=3):
    betas = np.zeros((n, 4)) if betas is None else betas
    return ContextualEnvironment(ALPHA, betas, 0.5, FeatureBox.unit(3))


def test_continue_probability_at_intercept_only_user():
    q = make_ctx().continue_prob(np.array([1.0, 0, 0, 0]))
    assert q == pytest.approx(1 / (1 + math.exp(-0.25)), abs=1e-15)
    assert q == pytest.approx(0.5621765008857981, abs=1e-15)


def test_zero_index_gives_even_odds():
    np.testing.assert_array_equal(make_ctx().valuations(np.array([1.0, 0.3, 0.2, 0.9])), 0.5)


def test_contextual_frequencies_match_model():
    rng = np.random.default_rng(6)
    betas = rng.uniform([-2.5, -2.5, 0, 0], [0, 0, 0.5, 0.5], size=(3, 4))
    ctx = make_ctx(betas)
    x = np.array([1.0, 0.2, 0.7, 0.4])
    env = ctx.at(x)
    cat = MessageCatalog([0.5, 0.6, 0.7])
    seq, n = [2, 0, 1], 10**6
    c = counts(seq, env.valuations, env.continue_prob, n, 7)
    np.testing.assert_allclose(c[:3] / n, selection_probabilities(cat, env, seq)[seq], atol=3e-3)
    assert c[3] / n == pytest.approx(abandonment_probability(cat, env, seq), abs=3e-3)


def test_contextual_episode_checks_dimension():
    ctx = make_ctx()
    with pytest.raises(ConstraintViolation):
        run_contextual_episode(MessageCatalog([1.0, 1.0, 1.0]), ctx, np.ones(3), [0], np.random.default_rng(0))


def test_contextual_dimension_mismatch_rejected():
    with pytest.raises(ConstraintViolation):
        ContextualEnvironment(ALPHA, np.zeros((2, 3)), 0.5, FeatureBox.unit(3))


def test_link_symmetry_and_extremes(rng):
    z = rng.normal(0, 50, 1000)
    np.testing.assert_allclose(logistic_link(-z), 1 - logistic_link(z), atol=1e-15)
    assert logistic_link(0.0) == 0.5
    assert 0 <= logistic_link(-700.0) < 1e-300 and logistic_link(700.0) == 1.0


# ---- features

def test_feature_shape_and_intercept():
    x = sample_features(FeatureBox.unit(3), np.random.default_rng(0), size=100)
    assert x.shape == (100, 4) and np.all(x[:, 0] == 1.0)
    assert np.all((x[:, 1:] >= 0) & (x[:, 1:] <= 1))


def test_degenerate_range_is_constant():
    x = sample_features(FeatureBox((0.3, 0.0), (0.3, 1.0)), np.random.default_rng(0), size=50)
    assert np.all(x[:, 1] == 0.3)


def test_feature_means():
    box = FeatureBox((0.0, -1.0, 2.0), (1.0, 1.0, 5.0))
    x = sample_features(box, np.random.default_rng(1), size=10**5)
    np.testing.assert_allclose(x[:, 1:].mean(axis=0), [0.5, 0.0, 3.5], atol=0.01)


def test_batch_draw_equals_single_draws():
    box = FeatureBox.unit(3)
    batch = sample_features(box, np.random.default_rng(2), size=5)
    rng = np.random.default_rng(2)
    np.testing.assert_array_equal(batch, [sample_features(box, rng) for _ in range(5)])


@pytest.mark.parametrize("low,high", [((0.0,), (1.0, 2.0)), ((1.0,), (0.0,)), ((), ())])
def test_invalid_feature_box(low, high):
    with pytest.raises(ConstraintViolation):
        FeatureBox(low, high)
