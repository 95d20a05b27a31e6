import pytest

from src.model.ExperimentConfig import ExperimentConfig, GraphSection, HarnessConfig
from src.model.ExecSimulator import Schedule
from src.paths import CONFIGS_DIR
from src.utils.Exceptions import ConfigError, SchedulingError


def test_default_config_matches_defaults():
    config = ExperimentConfig.load(CONFIGS_DIR / "default.toml")
    assert config == ExperimentConfig()
    assert config.build_graph().node_count == 9


def test_smoke_config(smoke_config):
    assert smoke_config.graph.env == "grid:2x2"
    assert smoke_config.model.hidden == 8
    assert smoke_config.train.rollout_length == 10
    assert smoke_config.harness.seeds == (0, 1, 2, 3, 4)
    assert smoke_config.env.arrival_rate == ExperimentConfig().env.arrival_rate


def test_toml_round_trip(tmp_path, smoke_config):
    config = smoke_config.with_overrides(method="neurcomm", mask="random", entropy_sign=-1,
                                         mask_features=("policy", "state"))
    assert config.train.mask_features == ("state", "policy")
    path = config.save(tmp_path / "config.toml")
    loaded = ExperimentConfig.load(path)
    assert loaded == config
    assert loaded.config_hash() == config.config_hash()
    assert loaded.to_toml() == config.to_toml()


def test_hash_follows_content(smoke_config):
    assert smoke_config.with_overrides(seed=3).config_hash() != smoke_config.config_hash()
    assert smoke_config.with_overrides().config_hash() == smoke_config.config_hash()


def test_overrides(smoke_config):
    config = smoke_config.with_overrides(seed=7, env="grid:1x3", episodes=4)
    assert config.harness.seeds == (7,)
    assert config.graph == GraphSection("grid:1x3")
    assert config.train.episodes == 4
    assert len(config.build_graph().edges) == 2
    with pytest.raises(ConfigError, match="ring"):
        smoke_config.with_overrides(env="ring:5").build_graph()


@pytest.mark.parametrize("text, fragment", [
    ("[graph]\nenv = \"grid:2x2\"\n[extra]\nx = 1\n", "секции"),
    ("[train]\nlearning_rate = 0.1\n", "learning_rate"),
    ("[exec]\nlatency = 2\n", "latency"),
    ("[train\nepisodes = 1\n", "синтаксиса"),
    ("[train]\nmethod = \"maddpg\"\n", "maddpg"),
    ("[mask]\nretention_bias = 1.0\n", "retention_bias"),
    ("train = 3\n", "таблицей"),
])
def test_invalid_documents(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        ExperimentConfig.from_toml(text)


def test_exec_section():
    config = ExperimentConfig.from_toml("[exec]\ncomm_ticks = 2\ncontrol_ticks = 4\nhorizon = 100\n"
                                        "drop_probability = 0.1\nmask_strategy = \"mean\"\n")
    assert config.exec.schedule == Schedule(comm_ticks=2, control_ticks=4, horizon=100)
    assert config.exec.channel.drop_probability == 0.1
    assert config.exec.mask_strategy == "mean"
    assert ExperimentConfig.from_toml(config.to_toml()) == config
    with pytest.raises(SchedulingError):
        ExperimentConfig.from_toml("[exec]\ncomm_ticks = 6\ncontrol_ticks = 5\n")


def test_harness_validation():
    with pytest.raises(ConfigError):
        HarnessConfig(seeds=())
    with pytest.raises(ConfigError):
        HarnessConfig(seeds=(1, 1))
    with pytest.raises(ConfigError):
        HarnessConfig(tail_fraction=0.0)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "absent.toml")
