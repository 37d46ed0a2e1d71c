import pytest
import yaml

from qrnn.config import PRESETS, ExperimentConfig, apply_override, build_config, dump_config
from qrnn.errors import ConfigError


def test_defaults_validate():
    cfg = ExperimentConfig()
    assert cfg.model.variant == "mpqlstm" and cfg.rom.rank == 20 and cfg.rom.sensors == 5
    assert not cfg.rom.center


@pytest.mark.parametrize("name", sorted(set(PRESETS) - {"csv"}))
def test_presets_validate(name):
    assert build_config(preset=name).name == name


def test_lorenz_preset_hyperparameters():
    cfg = build_config(preset="lorenz")
    assert (cfg.model.window, cfg.model.hidden, cfg.model.encoding_layers, cfg.model.qubits) == (20, 3, 3, 3)
    assert (cfg.training.lr, cfg.training.batch_size) == (1e-3, 64)
    assert cfg.dataset.lorenz.noise_std == 5.0


def test_csv_preset_requires_an_existing_path(tmp_path):
    with pytest.raises(ConfigError, match="dataset"):
        build_config(preset="csv")
    f = tmp_path / "d.csv"
    f.write_text("a\n1\n")
    cfg = build_config(preset="csv", overrides=[f"dataset.path={f}"])
    assert (cfg.model.hidden, cfg.model.window) == (9, 8)


def test_overrides_are_typed():
    cfg = build_config(preset="pressure-like", overrides=["training.epochs=3", "rom.solver=greedy",
                                                          "pipeline.hidden=[8, 4]", "model.measurement=tensor"])
    assert cfg.training.epochs == 3 and cfg.rom.solver == "greedy"
    assert cfg.pipeline.hidden == [8, 4] and cfg.model.measurement == "tensor"


def test_apply_override_errors():
    tree = {"a": 1}
    with pytest.raises(ConfigError):
        apply_override(tree, "novalue")
    with pytest.raises(ConfigError):
        apply_override(tree, "a.b=2")
    with pytest.raises(ConfigError):
        apply_override(tree, "=2")


@pytest.mark.parametrize("override, where", [
    ("training.lr=-1", "training.lr"),
    ("model.bogus=1", "model.bogus"),
    ("model.variant=transformer", "model.variant"),
    ("dataset.lorenz.noise_std=-0.5", "dataset.lorenz.noise_std"),
    ("dataset.split.train=0.9", "dataset.split"),
])
def test_invalid_values_name_the_field(override, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        build_config(overrides=[override])


def test_file_layers_over_preset_and_overrides_win(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"preset": "lorenz", "training": {"epochs": 7, "lr": 0.5}}))
    cfg = build_config(path, overrides=["training.lr=0.25"])
    assert cfg.name == "lorenz" and cfg.training.epochs == 7 and cfg.training.lr == 0.25
    assert cfg.model.window == 20


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        build_config(tmp_path / "none.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        build_config(tmp_path / "list.yaml")
    (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="YAML"):
        build_config(tmp_path / "bad.yaml")
    (tmp_path / "preset.yaml").write_text("preset: nope\n")
    with pytest.raises(ConfigError):
        build_config(tmp_path / "preset.yaml")
    with pytest.raises(ConfigError):
        build_config(preset="nope")


def test_dump_round_trip_and_digest(tmp_path):
    cfg = build_config(preset="pressure-like", overrides=["training.seed=4"])
    dump_config(cfg, tmp_path / "c.yaml")
    back = build_config(tmp_path / "c.yaml")
    assert back == cfg and back.digest() == cfg.digest()
    assert build_config(preset="pressure-like").digest() != cfg.digest()
