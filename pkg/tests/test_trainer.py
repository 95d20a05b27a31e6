from dataclasses import replace

import numpy as np
import pytest

from src.model.AgentPolicy import ModelConfig, PolicyOutput
from src.model.EnvGraph import EnvGraph
from src.model.RolloutBuffer import RolloutBatch
from src.model.Tensor import ComputationTape, Tensor, backward
from src.model.Trainer import (
    LOG_PROB_FLOOR, METRICS_COLUMNS, TrainConfig, Trainer, actor_loss, agent_losses, baseline_variants, build_policies,
    critic_loss, evaluate, replay_forward, train,
)
from src.model.TrafficEnv import EnvConfig, TrafficEnv
from src.utils.Exceptions import ConfigError, NumericError


class BatchCollected(Exception):
    pass


def collect_batch(trainer: Trainer, steps: int) -> RolloutBatch:
    """Прогон без обновлений: батч из первых steps шагов."""
    batches = []
    original = trainer.update_agent

    def capture(i, batch):
        batches.append(batch)
        raise BatchCollected

    trainer.update_agent = capture
    with pytest.raises(BatchCollected):
        trainer.train()
    trainer.update_agent = original
    assert batches[0].length == steps
    return batches[0]


def test_actor_loss_of_uniform_policy(line_graph, small_model):
    env = TrafficEnv(line_graph, EnvConfig(phase_count=4, episode_length=5), seed=0)
    policy = build_policies(env, small_model, TrainConfig(), 0)[0]
    length = 3
    batch = RolloutBatch(
        observations=None, fingerprints=None, hidden=None, cells=None,
        actions=np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]]), uniforms=None, log_probs=None, values=None,
        rewards=np.zeros((length, 3)), dones=np.zeros(length, dtype=bool), temperatures=np.ones(length),
        mask_noise=(), mask_values=(), bootstrap=np.zeros(3),
    )
    uniform = PolicyOutput(Tensor(np.full((length, 4), np.log(0.25))), None, None, None)
    loss, clamped = actor_loss(policy, batch, np.ones(length), beta=0.0, outputs=[uniform])
    assert loss.item() == pytest.approx(1.3863, abs=1e-4)
    assert clamped == 0
    plus, _ = actor_loss(policy, batch, np.ones(length), beta=0.1, entropy_sign=1, outputs=[uniform])
    minus, _ = actor_loss(policy, batch, np.ones(length), beta=0.1, entropy_sign=-1, outputs=[uniform])
    assert plus.item() == pytest.approx(np.log(4) + 0.1 * np.log(4))
    assert minus.item() == pytest.approx(np.log(4) - 0.1 * np.log(4))


def test_actor_loss_clamps_improbable_action(line_graph, small_model):
    env = TrafficEnv(line_graph, EnvConfig(phase_count=4, episode_length=5), seed=0)
    policy = build_policies(env, small_model, TrainConfig(), 0)[0]
    length = 2
    batch = RolloutBatch(
        observations=None, fingerprints=None, hidden=None, cells=None,
        actions=np.array([[0, 0, 0], [1, 0, 0]]), uniforms=None, log_probs=None, values=None,
        rewards=np.zeros((length, 3)), dones=np.zeros(length, dtype=bool), temperatures=np.ones(length),
        mask_noise=(), mask_values=(), bootstrap=np.zeros(3),
    )
    improbable = PolicyOutput(Tensor(np.array([[-80.0, -0.1, -3.0, -3.0]] * length)), None, None, None)
    loss, clamped = actor_loss(policy, batch, np.ones(length), beta=0.0, outputs=[improbable])
    assert clamped == 1
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx((-LOG_PROB_FLOOR + 0.1) / length)


def test_gradient_isolation(grid_2x2, small_env_config, small_model, small_prior, small_train):
    trainer = Trainer(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=1)
    batch = collect_batch(trainer, small_train.rollout_length)
    policy = trainer.policies[0]
    returns = np.linspace(-1.0, -2.0, batch.length)

    with ComputationTape() as tape:
        value = critic_loss(policy, batch, returns)
    grads = backward(tape, value, policy.parameters().values())
    assert all(not np.any(grads[t]) for t in policy.theta.values())
    assert all(not np.any(grads[t]) for t in policy.phi.values())
    assert any(np.any(grads[t]) for t in policy.omega.values())

    advantage = returns - batch.values[:, 0]
    with ComputationTape() as tape:
        actor, _ = actor_loss(policy, batch, advantage, beta=0.01)
    grads = backward(tape, actor, policy.parameters().values())
    assert all(not np.any(grads[t]) for t in policy.omega.values())
    assert any(np.any(grads[t]) for t in policy.theta.values())
    assert any(np.any(grads[t]) for t in policy.phi.values())


def test_loss_terms_add_up(grid_2x2, small_env_config, small_model, small_prior, small_train):
    trainer = Trainer(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=2)
    batch = collect_batch(trainer, small_train.rollout_length)
    returns = np.full(batch.length, -1.5)
    with ComputationTape():
        terms, _ = agent_losses(trainer.policies[1], batch, returns, small_train, 0.5)
    assert terms["total"].item() == pytest.approx(terms["elbo"].item() + 0.5 * terms["value"].item())
    # регуляризатор = перекрёстное слагаемое − энтропия, prior = −перекрёстное слагаемое
    assert terms["elbo"].item() == pytest.approx(
        terms["policy"].item() + terms["prior"].item() + terms["mask_entropy"].item())


def test_replay_reproduces_recorded_log_probs(grid_2x2, small_env_config, small_model, small_prior):
    config = TrainConfig(episodes=2, rollout_length=3, workers=1)
    trainer = Trainer(grid_2x2, small_env_config, small_model, small_prior, config, seed=3)
    original = trainer.update_agent
    checked = []

    def checking(i, batch):
        out, _ = replay_forward(trainer.policies[i], batch)
        taken = out.log_probs.data[np.arange(batch.length), batch.actions[:, i]]
        np.testing.assert_allclose(taken, batch.log_probs[:, i], atol=1e-9)
        checked.append(i)
        return original(i, batch)

    trainer.update_agent = checking
    trainer.train()
    assert len(checked) == 4 * trainer.updates


def test_metrics_rows(grid_2x2, small_env_config, small_model, small_prior, small_train):
    result = train(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=0)
    assert result.updates == 2
    assert len(result.metrics) == 2
    for row in result.metrics:
        assert tuple(row) == METRICS_COLUMNS
        assert row["total_loss"] == pytest.approx(row["elbo_loss"] + 0.5 * row["value_loss"])
    assert result.episodes[0]["steps"] == small_env_config.episode_length
    assert result.steps == small_env_config.episode_length


def test_training_is_deterministic_across_workers(grid_2x2, small_env_config, small_model, small_prior):
    config = TrainConfig(episodes=2, rollout_length=5, workers=1)
    single = train(grid_2x2, small_env_config, small_model, small_prior, config, seed=4)
    pooled = train(grid_2x2, small_env_config, small_model, small_prior, replace(config, workers=3), seed=4)
    assert single.episode_returns == pooled.episode_returns
    for a, b in zip(single.metrics, pooled.metrics):
        assert {k: v for k, v in a.items() if k != "wall_clock"} == {k: v for k, v in b.items() if k != "wall_clock"}


def test_different_seeds_differ(grid_2x2, small_env_config, small_model, small_prior, small_train):
    first = train(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=0)
    second = train(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=1)
    assert first.episode_returns != second.episode_returns


def test_saturated_mask_matches_unmasked(grid_2x2, small_env_config, small_prior):
    model = ModelConfig(hidden=6, embed=5, logit_mode="free", init_logit=50.0)
    config = TrainConfig(episodes=1, rollout_length=4, workers=1)
    unmasked = train(grid_2x2, small_env_config, model, small_prior, replace(config, mask_mode="none"), seed=5)
    saturated = train(grid_2x2, small_env_config, model, small_prior, config, seed=5)
    assert unmasked.episode_returns == saturated.episode_returns
    np.testing.assert_allclose([r["policy_loss"] for r in unmasked.metrics],
                               [r["policy_loss"] for r in saturated.metrics])

    env = TrafficEnv(grid_2x2, small_env_config, 5)
    fresh = build_policies(env, model, replace(config, mask_mode="none"), 5)
    fresh_saturated = build_policies(env, model, config, 5)
    a = evaluate(fresh, grid_2x2, small_env_config, seed=6)
    b = evaluate(fresh_saturated, grid_2x2, small_env_config, seed=6)
    np.testing.assert_array_equal(a.actions[0], b.actions[0])
    assert all(np.all(m == 1.0) for m in b.masks[0])


def test_mask_is_inert_for_isolated_agent(small_env_config, small_model, small_prior):
    single = EnvGraph(1, [])
    config = TrainConfig(episodes=1, rollout_length=4, workers=1)
    env = TrafficEnv(single, small_env_config, 0)
    learned = build_policies(env, small_model, config, 0)
    unmasked = build_policies(env, small_model, replace(config, mask_mode="none"), 0)
    a = evaluate(learned, single, small_env_config, seed=2)
    b = evaluate(unmasked, single, small_env_config, seed=2)
    np.testing.assert_array_equal(a.actions[0], b.actions[0])
    assert a.returns == b.returns


@pytest.mark.parametrize("method", ["bayesg", "ia2c", "commnet", "neurcomm"])
@pytest.mark.parametrize("mask_mode", ["learned", "random"])
def test_all_methods_train(method, mask_mode, line_graph, small_env_config, small_model, small_prior, small_train):
    config = replace(small_train, method=method, mask_mode=mask_mode)
    result = train(line_graph, small_env_config, small_model, small_prior, config, seed=0)
    assert len(result.episode_returns) == 1
    assert np.isfinite(result.episode_returns[0])


def test_baseline_variants(grid_2x2, small_env_config, small_model, small_prior, small_train):
    results = baseline_variants(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=0,
                                methods=("ia2c", "bayesg"))
    assert set(results) == {"ia2c", "bayesg"}
    assert not results["ia2c"].policies[0].phi


def test_extra_mask_samples_and_sgd(grid_2x2, small_env_config, small_prior):
    model = ModelConfig(hidden=6, embed=5, gcn_layers=2, straight_through=True)
    config = TrainConfig(episodes=1, rollout_length=4, workers=2, mask_samples=3, optimizer="sgd",
                         mask_features=("state",))
    result = train(grid_2x2, small_env_config, model, small_prior, config, seed=0)
    assert all(np.isfinite(row["total_loss"]) for row in result.metrics)


def test_nonfinite_loss_stops_training(tmp_path, grid_2x2, small_env_config, small_model, small_prior, small_train):
    trainer = Trainer(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=0,
                      diagnostics_dir=tmp_path)
    trainer.policies[0].omega["critic.bias"].data[:] = np.nan
    with np.errstate(all="ignore"), pytest.raises(NumericError):
        trainer.train()
    assert list(tmp_path.glob("nonfinite_seed0_step*.npz"))


def test_state_tensors_round_trip(grid_2x2, small_env_config, small_model, small_prior, small_train):
    trainer = Trainer(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=0)
    trainer.train()
    tensors = {k: v.copy() for k, v in trainer.state_tensors().items()}
    twin = Trainer(grid_2x2, small_env_config, small_model, small_prior, small_train, seed=0)
    twin.load_state_tensors(tensors)
    for name, value in twin.state_tensors().items():
        np.testing.assert_array_equal(value, tensors[name])


def test_evaluate_snapshot_bounds(grid_2x2, small_env_config, small_model, small_train):
    env = TrafficEnv(grid_2x2, small_env_config, 0)
    policies = build_policies(env, small_model, small_train, 0)
    result = evaluate(policies, grid_2x2, small_env_config, seed=0, episodes=2, snapshot_step=3)
    assert len(result.returns) == 2
    assert result.actions[0].shape == (small_env_config.episode_length, 4)
    assert result.snapshot[0].shape == (4, env.obs_dim)
    with pytest.raises(ConfigError):
        evaluate(policies, grid_2x2, small_env_config, snapshot_step=small_env_config.episode_length)


def test_invalid_train_config_rejected():
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(entropy_sign=0)
    with pytest.raises(ConfigError):
        TrainConfig(mask_features=())


def test_total_loss_gradient(gradient_check, small_prior):
    graph = EnvGraph(2, [(0, 1)])
    env_config = EnvConfig(episode_length=6, arrival_rate=0.8, initial_queue_rate=2.0)
    model = ModelConfig(hidden=3, embed=2)
    config = TrainConfig(episodes=1, rollout_length=3, workers=1, beta=0.05)
    trainer = Trainer(graph, env_config, model, small_prior, config, seed=11)
    batch = collect_batch(trainer, config.rollout_length)
    policy = trainer.policies[1]
    returns = np.array([-0.4, -0.9, -1.3])
    gradient_check(lambda params: agent_losses(policy, batch, returns, config, 0.3)[0]["total"],
                   policy.parameters())


def test_update_clips_all_groups_by_one_norm(grid_2x2, small_env_config, small_model, small_prior, monkeypatch):
    config = TrainConfig(episodes=1, rollout_length=4, workers=1, optimizer="sgd", max_grad_norm=1.0,
                         lr_theta=0.1, lr_omega=0.1, lr_phi=0.1)
    trainer = Trainer(grid_2x2, small_env_config, small_model, small_prior, config, seed=0)
    batch = collect_batch(trainer, config.rollout_length)
    policy = trainer.policies[0]
    before = {name: tensor.data.copy() for name, tensor in policy.parameters().items()}
    monkeypatch.setattr("src.model.Trainer.backward",
                        lambda tape, root, leaves: {tensor: np.ones_like(tensor.data) for tensor in leaves})
    trainer.update_agent(0, batch)
    size = sum(tensor.data.size for tensor in policy.parameters().values())
    for name, tensor in policy.parameters().items():
        np.testing.assert_allclose(before[name] - tensor.data, 0.1 / np.sqrt(size), rtol=1e-9, err_msg=name)


def test_ia2c_matches_bayesg_on_isolated_agent(small_env_config, small_model, small_prior):
    single = EnvGraph(1, [])
    config = TrainConfig(episodes=2, rollout_length=3, workers=1)
    bayesg = train(single, small_env_config, small_model, small_prior, config, seed=7)
    ia2c = train(single, small_env_config, small_model, small_prior, replace(config, method="ia2c"), seed=7)
    assert bayesg.episode_returns == ia2c.episode_returns
    for a, b in zip(bayesg.metrics, ia2c.metrics):
        assert {k: v for k, v in a.items() if k != "wall_clock"} == {k: v for k, v in b.items() if k != "wall_clock"}
    learned = bayesg.policies[0].parameters()
    for name, tensor in ia2c.policies[0].parameters().items():
        np.testing.assert_array_equal(tensor.data, learned[name].data, err_msg=name)


class BanditEnv(TrafficEnv):
    """Очереди как обычно, но награда зависит только от выбранной фазы: фаза 0 лучше."""

    def step(self, actions):
        outcome = super().step(actions)
        return replace(outcome, rewards=np.where(np.asarray(actions) == 0, 0.0, -1.0))


@pytest.mark.slow
def test_policy_improves_on_bandit(small_model, small_prior):
    single = EnvGraph(1, [])
    env_config = EnvConfig(phase_count=2, episode_length=20)
    config = TrainConfig(episodes=100, rollout_length=10, workers=1, gamma=0.1, lr_theta=0.01, lr_omega=0.01)
    trainer = Trainer(single, env_config, small_model, small_prior, config, seed=0)
    trainer.env = BanditEnv(single, env_config, 0)
    result = trainer.train()
    assert result.steps == 2000
    hidden = np.zeros((1, small_model.hidden))
    decision = trainer.decide(trainer.env.reset(), np.zeros((1, 2)), hidden, hidden.copy())
    assert decision.probs[0, 0] > 0.9
