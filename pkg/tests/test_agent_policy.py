import numpy as np
import pytest

from src.model.AgentPolicy import (
    AgentPolicy, ModelConfig, build_channels, neighbor_action_features, one_hot, sample_action,
)
from src.model.EnvGraph import ego_graph, make_grid
from src.model.NeuralBlocks import NetworkDims
from src.model.Tensor import ComputationTape, Tensor, backward, sum_
from src.utils.Exceptions import ConfigError

DIMS = NetworkDims(obs_dim=8, action_dim=2, hidden=5, embed=4, max_degree=2)


def make_policy(method="bayesg", mask_mode="learned", model=None, agent=0, seed=0) -> AgentPolicy:
    ego = ego_graph(make_grid(2, 2), agent)
    return AgentPolicy(agent, ego, method, DIMS, model or ModelConfig(hidden=5, embed=4), mask_mode,
                       ("state", "trajectory", "policy"), 2, np.random.default_rng(seed))


def step_inputs(seed=0):
    rng = np.random.default_rng(seed)
    observations = rng.uniform(size=(1, 4, DIMS.obs_dim))
    fingerprints = np.full((1, 4, DIMS.action_dim), 0.5)
    hidden = rng.normal(size=(1, 4, DIMS.hidden))
    return observations, fingerprints, hidden


def test_parameter_groups_are_disjoint():
    policy = make_policy()
    groups = policy.groups()
    names = [set(g) for g in groups.values()]
    assert not (names[0] & names[1]) and not (names[0] & names[2]) and not (names[1] & names[2])
    assert all(name.startswith("edge.") for name in groups["phi"])
    assert len(policy.parameters()) == sum(len(n) for n in names)


@pytest.mark.parametrize("method, mask_mode, has_phi", [
    ("bayesg", "learned", True), ("bayesg", "none", False), ("bayesg", "random", False),
    ("ia2c", "learned", False), ("commnet", "learned", False), ("neurcomm", "learned", False),
])
def test_mask_parameters_only_when_learned(method, mask_mode, has_phi):
    assert bool(make_policy(method, mask_mode).phi) == has_phi


def test_free_logits_start_at_init_value():
    policy = make_policy(model=ModelConfig(hidden=5, embed=4, logit_mode="free", init_logit=2.5))
    channels = build_channels(*step_inputs(), policy.ego.members)
    np.testing.assert_array_equal(policy.edge_logits(channels).data, [[2.5, 2.5]])


def test_free_logits_do_not_change_network_init():
    network = make_policy()
    free = make_policy(model=ModelConfig(hidden=5, embed=4, logit_mode="free"))
    for name, tensor in network.theta.items():
        np.testing.assert_array_equal(tensor.data, free.theta[name].data)


def test_none_and_random_masks():
    channels = build_channels(*step_inputs(), (0, 1, 2))
    _, ones = make_policy(mask_mode="none").draw_mask(channels, 1.0, None)
    np.testing.assert_array_equal(ones.values.data, [[1.0, 1.0]])
    _, coin = make_policy(mask_mode="random").draw_mask(channels, 1.0, np.random.default_rng(0))
    assert set(np.unique(coin.values.data)) <= {0.0, 1.0}
    phi, nothing = make_policy(method="ia2c").draw_mask(channels, 1.0, None)
    assert phi is None and nothing is None


def test_presample_matches_draw():
    policy = make_policy()
    channels = build_channels(*step_inputs(), policy.ego.members)
    noise, _ = policy.presample_mask(1, np.random.default_rng(7))
    _, drawn = policy.draw_mask(channels, 0.5, np.random.default_rng(7), training=False)
    _, replayed = policy.draw_mask(channels, 0.5, None, training=False, noise=noise)
    np.testing.assert_array_equal(drawn.values.data, replayed.values.data)


def test_act_is_reproducible_and_valid():
    policy = make_policy()
    obs, fps, hid = step_inputs()
    channels = build_channels(obs, fps, hid, policy.ego.members)
    decisions = [
        policy.act(channels, hid[0, 0], np.zeros(DIMS.hidden), 1.0, np.random.default_rng(1), np.random.default_rng(2))
        for _ in range(2)
    ]
    assert decisions[0].action == decisions[1].action
    assert 0 <= decisions[0].action < 2
    assert decisions[0].probs.sum() == pytest.approx(1.0)
    assert decisions[0].log_prob == pytest.approx(np.log(decisions[0].probs[decisions[0].action]))
    replay = policy.act(channels, hid[0, 0], np.zeros(DIMS.hidden), 1.0, None, None,
                        noise=decisions[0].mask_noise, uniform=decisions[0].uniform)
    np.testing.assert_allclose(replay.h, decisions[0].h)


def test_value_does_not_backpropagate_into_encoder():
    policy = make_policy()
    obs, fps, hid = step_inputs()
    channels = build_channels(obs, fps, hid, policy.ego.members)
    with ComputationTape() as tape:
        _, mask = policy.draw_mask(channels, 1.0, np.random.default_rng(0))
        out = policy.forward(channels, Tensor(hid[:, 0]), Tensor(np.zeros((1, DIMS.hidden))), mask)
        value = sum_(policy.value(out.h, policy.neighbor_features(np.zeros((1, 4), dtype=int))))
    grads = backward(tape, value, policy.parameters().values())
    assert all(not np.any(grads[t]) for t in policy.theta.values())
    assert all(not np.any(grads[t]) for t in policy.phi.values())
    assert any(np.any(grads[t]) for t in policy.omega.values())


def test_sample_action_inverse_cdf():
    probs = np.array([0.2, 0.5, 0.3])
    assert sample_action(probs, 0.1) == 0
    assert sample_action(probs, 0.69) == 1
    assert sample_action(probs, 0.95) == 2
    assert sample_action(np.array([1.0, 0.0]), 0.999) == 0


def test_neighbor_action_features_pad_to_max_degree():
    features = neighbor_action_features(np.array([[1, 0, 1]]), (2,), action_dim=2, max_degree=3)
    np.testing.assert_array_equal(features, [[0, 1, 0, 0, 0, 0]])
    np.testing.assert_array_equal(one_hot(np.array([2, 0]), 3), [[0, 0, 1], [1, 0, 0]])


def test_invalid_model_config_rejected():
    with pytest.raises(ConfigError):
        ModelConfig(gcn_layers=3)
    with pytest.raises(ConfigError):
        ModelConfig(logit_mode="fixed")
    with pytest.raises(ConfigError):
        make_policy(method="maddpg")
