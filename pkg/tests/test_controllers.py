from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from src.controller.MainController import MainController
from src.controller.command_controllers.GraphCommandController import export_latent_graph, latent_retention_matrix
from src.controller.command_controllers.ExecCommandController import ExecCommandController
from src.controller.command_controllers.TrainCommandController import (
    CHECKPOINT_NAME, ExperimentResult, TrainCommandController,
)
from src.model.Checkpoint import load_checkpoint
from src.model.EnvGraph import make_grid
from src.model.Trainer import build_policies
from src.model.TrafficEnv import TrafficEnv
from src.paths import CONFIGS_DIR
from src.utils.Exceptions import CheckpointError, ConfigError, NonFiniteError
from src.utils.Validator import EXIT_NUMERIC_FAILURE, EXIT_OK, EXIT_SEED_FAILURE
from src.view.ChartRenderer import render_return_curves
from src.view.ReportWriter import ReportWriter, summarize_curves, tail_statistics

SMOKE = str(CONFIGS_DIR / "smoke.toml")


@pytest.fixture
def app() -> MainController:
    controller = MainController([])
    controller.progress = False
    return controller


def test_smoke_harness_is_reproducible(tmp_path, app, smoke_config):
    trainer = app.controllers["train"]
    first = trainer.run_experiment(smoke_config, tmp_path / "a")
    assert first.directory.name == f"bayesg_learned_{smoke_config.config_hash()[:8]}"
    assert not first.failures
    for seed in smoke_config.harness.seeds:
        seed_dir = first.directory / f"seed_{seed}"
        for name in ("metrics.csv", "episodes.csv", "evaluation.csv", CHECKPOINT_NAME):
            assert (seed_dir / name).is_file()
    summary = pd.read_csv(first.directory / "summary.csv")
    assert list(summary.columns) == ["episode", "mean_return", "std_return", "seeds"]
    assert len(summary) == smoke_config.train.episodes
    assert (summary["seeds"] == 5).all()
    assert (summary["mean_return"] <= 0).all()
    final = pd.read_csv(first.directory / "final.csv")
    assert final.loc[0, "seeds"] == 5

    parallel = replace(smoke_config, harness=replace(smoke_config.harness, seed_workers=3))
    second = trainer.run_experiment(parallel, tmp_path / "b")
    assert (second.directory / "summary.csv").read_bytes() == (first.directory / "summary.csv").read_bytes()
    for seed in smoke_config.harness.seeds:
        name = f"seed_{seed}/episodes.csv"
        assert (second.directory / name).read_bytes() == (first.directory / name).read_bytes()


def test_failed_seed_does_not_stop_others(tmp_path, app, smoke_config, monkeypatch):
    trainer = app.controllers["train"]
    original = trainer.train_seed

    def flaky(config, graph, seed, directory):
        if seed == 1:
            raise NonFiniteError("Потери агента 0 не конечны: nan.")
        return original(config, graph, seed, directory)

    monkeypatch.setattr(trainer, "train_seed", flaky)
    config = replace(smoke_config.with_overrides(episodes=1), harness=replace(smoke_config.harness, seeds=(0, 1, 2)))
    result = trainer.run_experiment(config, tmp_path)
    assert result.numeric_failure
    assert result.exit_code == EXIT_NUMERIC_FAILURE
    assert sorted(result.outcomes) == [0, 2]
    failures = pd.read_csv(result.directory / "failures.csv")
    assert failures["seed"].tolist() == [1]
    assert pd.read_csv(result.directory / "summary.csv")["seeds"].eq(2).all()


def test_ablation_table(tmp_path, app, smoke_config):
    config = smoke_config.with_overrides(seed=0, episodes=1)
    config = replace(config, harness=replace(config.harness, excel=True))
    table = app.controllers["ablate"].ablation_suite(config, tmp_path)
    assert table["group"].tolist() == ["masking"] * 3 + ["features"] * 4
    assert table["variant"].tolist() == ["learned", "none", "random", "state", "trajectory", "policy", "all"]
    # обучаемая маска со всеми признаками обучается один раз
    learned = table.set_index(["group", "variant"])["mean_return"]
    assert learned[("masking", "learned")] == learned[("features", "all")]
    directory = next(tmp_path.glob("ablation_*"))
    assert (directory / "ablation.csv").is_file()
    assert (directory / "ablation.xlsx").is_file()
    assert pd.read_excel(directory / "ablation.xlsx").shape == (7, 6)


def test_latent_graph_export(tmp_path, app, smoke_config):
    config = smoke_config.with_overrides(seed=0, episodes=1)
    result = app.controllers["train"].run_experiment(config, tmp_path)
    checkpoint = load_checkpoint(result.directory / "seed_0" / CHECKPOINT_NAME)
    graph = make_grid(2, 2)
    matrix = export_latent_graph(checkpoint, graph, step=3)
    np.testing.assert_array_equal(np.diag(matrix), np.ones(4))
    np.testing.assert_array_equal(matrix > 0, graph.adjacency() + np.eye(4) > 0)
    assert np.all(matrix[graph.adjacency() > 0] < 1)

    with pytest.raises(CheckpointError):
        export_latent_graph(checkpoint, make_grid(1, 4))

    written = ReportWriter(tmp_path / "graph", excel=False).write_latent_graph(matrix, graph)
    edges = pd.read_csv(written[1])
    assert len(edges) == 2 * len(graph.edges)


def test_retention_matrix_by_mask_mode(grid_2x2, small_env_config, small_model, small_train):
    env = TrafficEnv(grid_2x2, small_env_config, 0)
    unmasked = build_policies(env, small_model, replace(small_train, mask_mode="none"), 0)
    np.testing.assert_array_equal(latent_retention_matrix(unmasked, grid_2x2, small_env_config, 0),
                                  grid_2x2.adjacency() + np.eye(4))
    random = build_policies(env, small_model, replace(small_train, mask_mode="random"), 0)
    matrix = latent_retention_matrix(random, grid_2x2, small_env_config, 0)
    assert set(matrix[grid_2x2.adjacency() > 0]) == {0.5}
    ia2c = build_policies(env, small_model, replace(small_train, method="ia2c"), 0)
    with pytest.raises(ConfigError):
        latent_retention_matrix(ia2c, grid_2x2, small_env_config, 0)


def test_cli_round_trip(tmp_path):
    out = tmp_path / "runs"
    code = MainController(["-q", "train", "--config", SMOKE, "--seed", "0", "--episodes", "1",
                           "--mask-features", "state,traj", "--out", str(out)]).run()
    assert code == 0
    checkpoint = next(out.glob(f"*/seed_0/{CHECKPOINT_NAME}"))

    code = MainController(["-q", "exec", "--checkpoint", str(checkpoint), "--drop", "1.0",
                           "--out", str(tmp_path / "exec")]).run()
    assert code == 0
    returns = pd.read_csv(tmp_path / "exec" / "exec_returns.csv")
    assert len(returns) == 1
    usage = pd.read_csv(tmp_path / "exec" / "edge_usage.csv")
    assert (usage["delivered"] == 0).all()

    code = MainController(["-q", "export-graph", "--checkpoint", str(checkpoint), "--env", "grid:2x2",
                           "--out", str(tmp_path / "graph")]).run()
    assert code == 0
    assert (tmp_path / "graph" / "latent_graph_matrix.csv").is_file()

    direct = MainController([])
    args = direct.parser.parse_args(["exec", "--checkpoint", str(checkpoint), "--out", str(tmp_path / "direct")])
    assert ExecCommandController.handle.__wrapped__(direct.controllers["exec"], args) == EXIT_OK

    code = MainController(["-q", "exec", "--checkpoint", str(checkpoint), "--comm-ticks", "9",
                           "--out", str(tmp_path / "bad")]).run()
    assert code == 2


@pytest.mark.parametrize("argv, expected", [
    (["validate-config", SMOKE], 0),
    (["validate-config", "absent.toml"], 2),
    (["train", "--method", "maddpg"], 2),
    ([], 2),
    (["-q", "train", "--config", SMOKE, "--env", "ring:4"], 2),
])
def test_cli_exit_codes(argv, expected):
    assert MainController(argv).run() == expected


def test_crashed_seeds_give_nonzero_exit(tmp_path, monkeypatch):
    def crashing(self, config, graph, seed, directory):
        raise OSError("Диск недоступен")

    monkeypatch.setattr(TrainCommandController, "train_seed", crashing)
    code = MainController(["-q", "train", "--config", SMOKE, "--episodes", "1", "--out", str(tmp_path / "train")]).run()
    assert code == EXIT_SEED_FAILURE
    failures = pd.read_csv(next((tmp_path / "train").glob("*/failures.csv")))
    assert failures["seed"].tolist() == [0, 1, 2, 3, 4]
    assert failures["error"].str.contains("Диск недоступен").all()

    code = MainController(["-q", "ablate", "--config", SMOKE, "--seed", "0", "--episodes", "1",
                           "--out", str(tmp_path / "ablate")]).run()
    assert code == EXIT_SEED_FAILURE


def test_experiment_exit_code(tmp_path):
    assert ExperimentResult(tmp_path).exit_code == EXIT_OK
    assert ExperimentResult(tmp_path, failures={1: "OSError"}).exit_code == EXIT_SEED_FAILURE
    assert ExperimentResult(tmp_path, failures={1: "nan"}, numeric_failure=True).exit_code == EXIT_NUMERIC_FAILURE


def test_invalid_config_file(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[train]\nepisodes = 0\n", encoding="utf-8")
    assert MainController(["validate-config", str(path)]).run() == 2


def test_summaries():
    curves = {0: [1.0, 2.0, 3.0], 1: [3.0, 4.0]}
    summary = summarize_curves(curves)
    assert summary["mean_return"].tolist() == [2.0, 3.0]
    assert summary["std_return"].tolist() == [1.0, 1.0]
    assert summarize_curves({}).empty

    tail = tail_statistics({0: [0.0, 0.0, 0.0, 0.0, -10.0], 1: [0.0] * 5}, tail_fraction=0.2)
    assert tail == {"mean": -5.0, "std": 5.0, "seeds": 2}
    assert tail_statistics({0: []})["seeds"] == 0


def test_return_chart(tmp_path):
    path = render_return_curves({"bayesg": [-3.0, -2.0, -1.5], "ia2c": [-3.0, -2.5, -2.4]},
                                tmp_path / "returns.svg")
    assert "<svg" in path.read_text(encoding="utf-8")
    with pytest.raises(ValueError):
        render_return_curves({"bayesg": []}, tmp_path / "empty.svg")


def test_trajectory_dump(tmp_path, app, smoke_config):
    config = smoke_config.with_overrides(seed=0, episodes=1)
    config = replace(config, harness=replace(config.harness, trajectory=True))
    result = app.controllers["train"].run_experiment(config, tmp_path)
    frame = pd.read_csv(result.directory / "seed_0" / "trajectory.csv")
    assert list(frame.columns) == ["step", "node", "queue_sum", "action", "reward"]
    assert len(frame) == config.env.episode_length * 4
    assert (frame["reward"] <= 0).all()
