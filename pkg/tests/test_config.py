import pytest

from flsim.config import ExperimentConfig, apply_overrides, load_config, parse_config_text
from flsim.errors import ConfigError


def test_parse_text_with_comments_and_lists():
    cfg = parse_config_text(
        """
        # attack setup
        workers = 6
        attack.kind = gaussian   # trailing comment
        attack.byzantine_ids = 4,5
        attack.sigma = 100
        output.timing = true
        model.hidden = 16,8
        """
    )
    assert cfg.workers == 6
    assert cfg.attack.byzantine_ids == (4, 5)
    assert cfg.attack.sigma == 100.0
    assert cfg.output.timing is True
    assert cfg.model.hidden == (16, 8)


def test_text_round_trip():
    cfg = apply_overrides(ExperimentConfig(), ["aggregator.kind=legato", "attack.epsilon=0.5"])
    assert parse_config_text(cfg.to_text()) == cfg
    assert ExperimentConfig.from_flat(cfg.to_flat()) == cfg


def test_override_changes_one_field():
    base = ExperimentConfig()
    changed = apply_overrides(base, ["attack.sigma=100"])
    diff = {k for k, v in changed.to_flat().items() if base.to_flat()[k] != v}
    assert diff == {"attack.sigma"}


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("attack.sigmaa = 3", "unknown config key"),
        ("nosection.x = 1", "unknown config key"),
        ("workers = many", "invalid value"),
        ("workers 10", "expected key=value"),
        ("output.timing = maybe", "invalid value"),
        ("workers = 2.5", "invalid value"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config_text(text, "exp.cfg")


def test_parse_error_names_line():
    with pytest.raises(ConfigError, match="exp.cfg:2"):
        parse_config_text("workers = 3\nbogus = 1\n", "exp.cfg")


def test_load_missing_file_names_path(tmp_path):
    missing = tmp_path / "absent.cfg"
    with pytest.raises(ConfigError, match="absent.cfg"):
        load_config(missing)


def test_load_applies_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("workers = 4\nseed = 3\n", encoding="utf-8")
    cfg = load_config(path, ["seed=9"])
    assert (cfg.workers, cfg.seed) == (4, 9)
    with pytest.raises(ConfigError):
        load_config(path, ["seed"])


@pytest.mark.parametrize(
    "overrides",
    [
        ["workers=0"],
        ["train.eval_every=0"],
        ["train.batch_size=500"],
        ["data.partition=dirichlet"],
        ["attack.kind=gaussian"],
        ["attack.byzantine_ids=1"],
        ["aggregator.log_size=0"],
    ],
)
def test_validation_failures(overrides):
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), overrides).validate()


def test_defaults_validate():
    ExperimentConfig().validate()
