import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import rel_err
from swarmcover.dynamics import SwarmState
from swarmcover.env import Observation, observe, observe_all, state_matrix
from swarmcover.geometry import unit_square
from swarmcover.nets import (
    ActorNet,
    CriticNet,
    GaussianPolicy,
    actor_forward,
    build_actor,
    build_critic,
    critic_values,
    deterministic_action,
    gaussian_log_prob_grads,
    sample_action,
    value_sum,
)


def small_actor(seed=0):
    return ActorNet(hidden=4, trunk=(5, 5), init_log_std=-0.3, seed=seed)


def small_critic(seed=1):
    return CriticNet(d_m=6, d_k=3, d_v=6, value_hidden=(5,), seed=seed)


def random_swarm(rng, n):
    return SwarmState(rng.uniform(-0.3, 1.3, size=(n, 2)), rng.uniform(-1, 1, size=(n, 2)))


def zero_params(net):
    for p in net.named_params().values():
        p.value[...] = 0.0


def fd_param_check(net, scalar, analytic, h=1e-6):
    worst = 0.0
    for name, p in net.named_params().items():
        flat = p.value.reshape(-1)
        num = np.zeros(flat.size)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            fp = scalar()
            flat[k] = old - h
            fm = scalar()
            flat[k] = old
            num[k] = (fp - fm) / (2 * h)
        worst = max(worst, rel_err(analytic[name].reshape(-1), num))
    return worst


def test_zero_actor_outputs_zero_mean():
    net = small_actor()
    zero_params(net)
    rng = np.random.default_rng(0)
    obs = observe(0, random_swarm(rng, 5), unit_square())
    pol = actor_forward(net, obs)
    np.testing.assert_array_equal(pol.mean, 0.0)
    np.testing.assert_array_equal(pol.std, 1.0)


def test_actor_single_agent():
    net = small_actor()
    obs = observe(0, SwarmState(np.array([[0.5, 0.5]]), np.zeros((1, 2))), unit_square())
    assert obs.others.shape == (0, 2)
    pol = actor_forward(net, obs)
    assert pol.mean.shape == (2,) and np.all(np.isfinite(pol.mean))
    # an empty sequence behaves as if the LSTM state were zero
    h_free = net.mean_head.forward(net.trunk.forward(np.concatenate([np.zeros(4), obs.own])[None]))[0]
    np.testing.assert_allclose(pol.mean, h_free, atol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_actor_ignores_storage_order(seed, n):
    rng = np.random.default_rng(seed)
    net = small_actor()
    swarm = random_swarm(rng, n)
    perm = rng.permutation(n)
    shuffled = SwarmState(swarm.p[perm], swarm.v[perm])
    i = int(rng.integers(n))
    a = actor_forward(net, observe(i, swarm, unit_square())).mean
    b = actor_forward(net, observe(int(np.argmax(perm == i)), shuffled, unit_square())).mean
    np.testing.assert_array_equal(a, b)


def test_parameter_sharing_identical_observations():
    net = small_actor()
    rng = np.random.default_rng(2)
    own, others = observe_all(random_swarm(rng, 4), unit_square())
    own = np.repeat(own[:1], 3, axis=0)
    others = np.repeat(others[:1], 3, axis=0)
    means = net.forward(own, others)
    assert np.all(means == means[0])


def test_log_std_is_clamped():
    net = small_actor()
    net.log_std.value[...] = [-50.0, 50.0]
    np.testing.assert_allclose(np.exp(net.clamped_log_std()), [1e-4, 10.0])


def test_sample_action_log_prob_at_mean():
    pol = GaussianPolicy(np.array([0.2, -0.1]), np.ones(2))
    rng = np.random.default_rng(0)
    _, raw, _ = sample_action(pol, rng, 1.0)
    from swarmcover.nets import gaussian_log_prob

    assert gaussian_log_prob(pol.mean, pol.mean, np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    assert gaussian_log_prob(pol.mean, pol.mean, np.zeros(2)) == pytest.approx(-1.837877, abs=1e-6)


def test_sample_action_tiny_std_concentrates():
    pol = GaussianPolicy(np.array([0.3, 0.4]), np.full(2, 1e-4))
    rng = np.random.default_rng(1)
    for _ in range(100):
        act, raw, _ = sample_action(pol, rng, 1.0)
        assert np.linalg.norm(act - pol.mean) <= 1e-3
        assert np.linalg.norm(act - deterministic_action(pol, 1.0)) <= 1e-3


def test_sample_action_empirical_mean():
    mean, std = np.array([0.1, -0.2]), np.array([0.5, 2.0])
    pol = GaussianPolicy(mean, std)
    rng = np.random.default_rng(5)
    draws = np.array([sample_action(pol, rng, 100.0)[1] for _ in range(100_000)])
    se = std / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) <= 3 * se)


def test_sample_action_clamps_env_action_only():
    pol = GaussianPolicy(np.array([3.0, 4.0]), np.full(2, 1e-4))
    act, raw, logp = sample_action(pol, np.random.default_rng(0), 1.0)
    assert np.linalg.norm(act) == pytest.approx(1.0)
    assert np.linalg.norm(raw) == pytest.approx(5.0, abs=1e-3)
    assert np.isfinite(logp)


def test_deterministic_action_examples():
    np.testing.assert_array_equal(deterministic_action(GaussianPolicy(np.zeros(2), np.ones(2)), 1.0), 0)
    np.testing.assert_allclose(deterministic_action(GaussianPolicy(np.array([3.0, 4.0]), np.ones(2)), 1.0),
                               [0.6, 0.8])


@pytest.mark.parametrize("seed", range(5))
def test_actor_log_prob_gradients(seed):
    rng = np.random.default_rng(seed)
    net = small_actor(seed)
    # undo the small output init so upstream gradients sit well above finite-difference noise
    net.mean_head.W.value *= 100.0
    own = rng.normal(size=(3, 8))
    others = rng.normal(size=(3, 2, 2))
    actions = rng.normal(size=(3, 2))
    w = rng.normal(size=3)

    def scalar():
        return float(np.sum(w * net.log_prob(own, others, actions)[0]))

    net.zero_grad()
    mean = net.forward(own, others)
    dmean, dls = gaussian_log_prob_grads(actions, mean, net.clamped_log_std())
    net.backward(dmean * w[:, None], np.sum(dls * w[:, None], axis=0))
    analytic = {k: p.grad.copy() for k, p in net.named_params().items()}
    assert fd_param_check(net, scalar, analytic) <= 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_critic_gradients(seed):
    rng = np.random.default_rng(seed)
    net = small_critic(seed)
    S = rng.normal(size=(2, 4, 8))
    w = rng.normal(size=(2, 4))

    def scalar():
        return float(np.sum(w * net.forward(S)))

    net.zero_grad()
    net.forward(S)
    net.backward(w)
    analytic = {k: p.grad.copy() for k, p in net.named_params().items()}
    assert fd_param_check(net, scalar, analytic) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 9))
def test_critic_permutation_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    net = build_critic(seed=3)
    S = state_matrix(random_swarm(rng, n), unit_square())
    perm = rng.permutation(n)
    vals = critic_values(net, S)
    assert vals.shape == (n,)
    np.testing.assert_allclose(critic_values(net, S[perm]), vals[perm], atol=1e-10)
    assert value_sum(critic_values(net, S[perm])) == pytest.approx(value_sum(vals), abs=1e-10)


def test_critic_single_agent_uses_own_row():
    net = small_critic()
    rng = np.random.default_rng(0)
    row = rng.normal(size=(1, 8))
    v = critic_values(net, row)
    E = net.embed.forward(row)
    expected = net.value_mlp.forward(net.norm.forward(E + E @ net.attention.W_v.value))[..., 0]
    np.testing.assert_allclose(v, expected, atol=1e-14)


def test_zero_critic_outputs_bias_path():
    net = small_critic()
    zero_params(net)
    net.value_mlp.layers[-1].b.value[...] = 0.7
    np.testing.assert_array_equal(critic_values(net, np.random.default_rng(0).normal(size=(5, 8))), 0.7)


def test_critic_rejects_mismatched_residual():
    with pytest.raises(ValueError):
        CriticNet(d_m=8, d_v=4)


def test_value_sum_examples():
    assert value_sum([1, 2, 3]) == 6
    assert value_sum([2.5]) == 2.5
    with pytest.raises(ValueError):
        value_sum([])
    vals = critic_values(small_critic(), np.random.default_rng(0).normal(size=(6, 8)))
    assert value_sum(vals) == float(np.sum(vals))


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_default_actor_runs_for_any_n(n):
    net = build_actor(seed=0)
    own, others = observe_all(random_swarm(np.random.default_rng(n), n), unit_square())
    assert net.forward(own, others).shape == (n, 2)
