import numpy as np
import pytest

from src.model.Checkpoint import (
    FORMAT_VERSION, MAGIC, Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, restore_policies,
    save_checkpoint, trainer_checkpoint,
)
from src.model.Trainer import Trainer, evaluate
from src.utils.Exceptions import CheckpointError, ConfigError


@pytest.fixture
def trained(smoke_config):
    config = smoke_config.with_overrides(seed=0, episodes=1)
    trainer = Trainer(config.build_graph(), config.env, config.model, config.prior, config.train, seed=0)
    trainer.train()
    return config, trainer


def test_bytes_are_stable():
    checkpoint = Checkpoint(
        tensors={"b": np.arange(6.0).reshape(2, 3), "a": np.array(2.5), "c": np.linspace(-1.0, 1.0, 4)},
        meta={"step": 7, "note": "проверка"},
    )
    data = encode_checkpoint(checkpoint)
    assert data.startswith(MAGIC)
    decoded = decode_checkpoint(data)
    assert decoded.version == FORMAT_VERSION
    assert decoded.step == 7
    assert decoded.meta == checkpoint.meta
    assert decoded.tensors["a"].shape == ()
    assert decoded.tensors["c"].shape == (4,)
    np.testing.assert_array_equal(decoded.tensors["b"], checkpoint.tensors["b"])
    assert encode_checkpoint(decoded) == data


def test_corrupted_bytes_rejected():
    data = encode_checkpoint(Checkpoint(tensors={"w": np.ones((3, 3))}, meta={"step": 1}))
    with pytest.raises(CheckpointError, match="сигнатура"):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="версия"):
        decode_checkpoint(MAGIC + (FORMAT_VERSION + 1).to_bytes(2, "little") + data[6:])
    for cut in (3, 10, len(data) - 1):
        with pytest.raises(CheckpointError):
            decode_checkpoint(data[:cut])


def test_save_and_load(tmp_path, trained):
    config, trainer = trained
    path = save_checkpoint(tmp_path / "run" / "checkpoint.bayg", trainer_checkpoint(trainer, config))
    loaded = load_checkpoint(path)
    assert loaded.step == trainer.global_step
    assert loaded.meta["updates"] == trainer.updates
    assert loaded.meta["seed"] == 0
    assert loaded.meta["graph"] == trainer.graph.fingerprint()
    for name, value in trainer.state_tensors().items():
        np.testing.assert_array_equal(loaded.tensors[name], value)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing.bayg")


def test_restored_policies_act_identically(trained):
    config, trainer = trained
    checkpoint = decode_checkpoint(encode_checkpoint(trainer_checkpoint(trainer, config)))
    restored_config, graph, policies, seed = restore_policies(checkpoint)
    assert seed == 0
    assert restored_config == config
    assert graph.fingerprint() == trainer.graph.fingerprint()
    expected = evaluate(trainer.policies, graph, config.env, seed=9)
    actual = evaluate(policies, graph, restored_config.env, seed=9)
    np.testing.assert_array_equal(actual.actions[0], expected.actions[0])
    assert actual.returns == expected.returns


def test_tampered_checkpoint_rejected(trained):
    config, trainer = trained
    checkpoint = trainer_checkpoint(trainer, config)

    edited = dict(checkpoint.meta, config=checkpoint.meta["config"].replace("hidden = 8", "hidden = 9"))
    with pytest.raises(CheckpointError, match="Хеш"):
        restore_policies(Checkpoint(checkpoint.tensors, edited))

    with pytest.raises(CheckpointError, match="Граф"):
        restore_policies(Checkpoint(checkpoint.tensors, dict(checkpoint.meta, graph="4:0-1")))

    missing = {k: v for k, v in checkpoint.tensors.items() if k != "agent0.actor.bias"}
    with pytest.raises(CheckpointError):
        restore_policies(Checkpoint(missing, checkpoint.meta))

    with pytest.raises(CheckpointError):
        restore_policies(Checkpoint(checkpoint.tensors, {}))
