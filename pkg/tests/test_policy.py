import math

import numpy as np
import pytest

from skillfocus.core.autodiff import HALF_LOG_2PI
from skillfocus.core.exceptions import HistoryWindowError, MissingRecordError, PrivilegedFieldError, ShapeMismatchError
from skillfocus.core.layers import PolicyParams
from skillfocus.core.optim import init_optimizer
from skillfocus.services.policy import PolicyRecord


def _zero_params(policy, rng):
    params = policy.init_params(rng)
    return PolicyParams({name: np.zeros_like(value) for name, value in params.arrays.items()})


def _with_index_bias(policy, rng, bias):
    params = _zero_params(policy, rng)
    return params.replace({"index_head.bias": np.asarray(bias, dtype=np.float64)})


def test_zero_network_is_uniform(policy, rng):
    params = _zero_params(policy, rng)
    obs = rng.normal(size=(3, policy.layout.actor_dim))
    logits, mean, w = policy.actor_forward(params, obs)
    assert np.array_equal(logits, np.zeros((3, 4)))
    np.testing.assert_allclose(w, 0.25, atol=1e-15)
    assert np.array_equal(mean, np.zeros((3, 5)))


def test_outputs_on_simplex_and_in_range(policy, params, rng):
    obs = rng.normal(scale=3.0, size=(50, policy.layout.actor_dim))
    _, mean, w = policy.actor_forward(params, obs)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(w >= 0.0)
    assert np.all(np.abs(mean) <= 1.0)


def test_forward_is_deterministic(policy, params, rng):
    obs = rng.normal(size=(5, policy.layout.actor_dim))
    first = [a.copy() for a in policy.actor_forward(params, obs)]
    second = policy.actor_forward(params, obs)
    assert all(np.array_equal(a, b) for a, b in zip(first, second))


def test_dominant_logit_always_selects_first_skill(policy, rng):
    params = _with_index_bias(policy, rng, [60.0, 0.0, 0.0, 0.0])
    obs = rng.normal(size=(500, policy.layout.actor_dim))
    actions = policy.sample_action(params, obs, rng)
    assert {a.skill_id for a in actions} == {1}


def test_log_density_at_mean_with_unit_std(policy, rng):
    params = _zero_params(policy, rng)
    action = policy.sample_action(params, np.zeros(policy.layout.actor_dim), rng, deterministic=True)[0]
    assert np.array_equal(action.command, action.command_mean)
    assert action.log_prob_command_joint == pytest.approx(-5 * HALF_LOG_2PI, abs=1e-12)
    np.testing.assert_allclose(action.log_prob_command_per_skill, [-2 * HALF_LOG_2PI] * 2 + [-3 * HALF_LOG_2PI] * 2)
    assert HALF_LOG_2PI == pytest.approx(0.9189385332, abs=1e-10)


def test_skill_frequencies_follow_focus_weights(policy, rng):
    params = _with_index_bias(policy, rng, np.log([0.7, 0.1, 0.1, 0.1]))
    obs = np.zeros((100_000, policy.layout.actor_dim))
    actions = policy.sample_action(params, obs, rng)
    frequency = np.mean([a.skill == 0 for a in actions])
    assert abs(frequency - 0.7) < 0.01


def test_sampled_commands_are_unbounded(policy, rng):
    params = _zero_params(policy, rng).replace({"command_log_std": np.full(5, math.log(2.0))})
    actions = policy.sample_action(params, np.zeros((200, policy.layout.actor_dim)), rng)
    assert max(np.abs(a.command).max() for a in actions) > 1.0


def test_log_prob_uniform_index(policy, rng):
    params = _zero_params(policy, rng)
    obs = rng.normal(size=(4, policy.layout.actor_dim))
    record = PolicyRecord(skills=np.array([0, 1, 2, 3]), commands=rng.normal(size=(4, 5)))
    log_prob_index, _ = policy.log_prob(params, obs, record)
    np.testing.assert_allclose(log_prob_index, math.log(0.25), atol=1e-15)


def test_dribbling_skills_share_command_log_prob(policy, params, rng):
    obs = rng.normal(size=(6, policy.layout.actor_dim))
    record = PolicyRecord(skills=rng.integers(0, 4, 6), commands=rng.normal(size=(6, 5)))
    _, per_skill = policy.log_prob(params, obs, record)
    assert np.array_equal(per_skill[:, 0], per_skill[:, 1])
    assert np.array_equal(per_skill[:, 2], per_skill[:, 3])


def test_index_log_prob_matches_softmax(policy, params, rng):
    obs = rng.normal(size=(8, policy.layout.actor_dim))
    skills = rng.integers(0, 4, 8)
    record = PolicyRecord(skills=skills, commands=np.zeros((8, 5)))
    log_prob_index, _ = policy.log_prob(params, obs, record)
    logits, _, w = policy.actor_forward(params, obs)
    softmax = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    rows = np.arange(8)
    np.testing.assert_allclose(np.exp(log_prob_index), softmax[rows, skills], atol=1e-12)
    np.testing.assert_allclose(w[rows, skills], np.exp(log_prob_index), atol=1e-12)


def test_log_prob_needs_actions(policy, params, rng):
    with pytest.raises(MissingRecordError):
        policy.log_prob(params, np.zeros(policy.layout.actor_dim), PolicyRecord())
    with pytest.raises(MissingRecordError):
        PolicyRecord(skills=np.zeros(1, dtype=int), commands=np.zeros((1, 5))).validate()


def test_actor_rejects_wrong_width(policy, params):
    with pytest.raises(ShapeMismatchError):
        policy.actor_forward(params, np.zeros((2, policy.layout.actor_dim + 1)))


def test_critic_zero_network(policy, rng):
    params = _zero_params(policy, rng)
    values = policy.critic_forward(params, rng.normal(size=(3, policy.layout.state_dim)))
    assert np.array_equal(values, np.zeros(3))


def test_critic_rejects_actor_observation(policy, params):
    with pytest.raises(PrivilegedFieldError):
        policy.critic_forward(params, np.zeros((2, policy.layout.actor_dim)))


def test_critic_fits_constant_return(policy, params, rng):
    states = rng.normal(size=(32, policy.layout.state_dim))
    state = init_optimizer(params, policy.critic_names(params), lr=1e-2)
    for _ in range(500):
        params, state, _ = policy.critic_update(params, states, np.ones(32), state)
    assert np.max(np.abs(policy.critic_forward(params, states) - 1.0)) < 0.05


def _histories(policy, rng, batch=4, window=None):
    window = window or policy.network.history_window
    return rng.normal(size=(batch, window, policy.layout.raw_dim))


def test_estimator_loss_is_zero_on_own_prediction(policy, params, rng):
    history = _histories(policy, rng)
    prediction = policy.estimator_forward(params, history)
    assert policy.estimator_loss(params, history, prediction) == 0.0


def test_estimator_update_moves_only_estimator(policy, params, rng):
    history = _histories(policy, rng)
    target = rng.normal(size=(4, policy.layout.context_dim))
    state = init_optimizer(params, policy.estimator_names(params), lr=1e-3)
    new, _, _ = policy.estimator_update(params, history, target, state)
    assert new.bit_equal(params, "sfe.")
    assert new.bit_equal(params, "critic.")
    assert new.bit_equal(params, "command_head.")
    assert not new.bit_equal(params, "estimator.")


def test_estimator_regression_decreases(policy, params, rng):
    history = _histories(policy, rng, batch=16)
    target = np.tile(np.array([0.5, -0.2, 0.1, 0.0, 0.3, 0.2]), (16, 1))
    state = init_optimizer(params, policy.estimator_names(params), lr=1e-3)
    losses = []
    for _ in range(300):
        params, state, loss = policy.estimator_update(params, history, target, state)
        losses.append(loss)
    windows = [np.mean(losses[i:i + 100]) for i in (0, 100, 200)]
    assert windows[0] > windows[1] > windows[2]


def test_short_history_raises(policy, params, rng):
    with pytest.raises(HistoryWindowError):
        policy.estimator_forward(params, _histories(policy, rng, window=policy.network.history_window - 1))


def test_longer_history_uses_latest_window(policy, params, rng):
    window = policy.network.history_window
    history = _histories(policy, rng, window=window + 3)
    np.testing.assert_array_equal(
        policy.estimator_forward(params, history), policy.estimator_forward(params, history[:, -window:])
    )
