"""
Tests for experiment configuration
"""

from pathlib import Path

import pytest
import yaml

from src.config import (
    OUTPUT_DIR_ENV,
    ExperimentConfig,
    build_config,
    dump_config,
    expand_dotted,
    load_config,
    parse_override,
)
from src.core.topology import TopologyKind
from src.error_handling import ConfigurationError

pytestmark = pytest.mark.unit

CONFIG_DIR = Path(__file__).resolve().parents[2] / "config"


@pytest.fixture(autouse=True)
def no_output_env(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


def _write(tmp_path, tree, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(tree))
    return path


def test_defaults():
    """Test every section has defaults"""
    config = ExperimentConfig()
    assert config.lr2.beta == 0.6
    assert config.lr2.mu == 0.2
    assert config.reputation.alpha == 0.5
    assert config.arena.steps == 20
    assert config.topology.topology_kind is TopologyKind.LATTICE_VON_NEUMANN
    assert config.topology.population_size == 100


def test_dotted_keys_merge_with_sections():
    """Test nested sections and dotted keys combine, dotted keys winning"""
    tree = expand_dotted({"lr2": {"beta": 0.5, "mu": 0.1}, "lr2.beta": 0.7, "arena.seed": 3})
    assert tree == {"lr2": {"beta": 0.7, "mu": 0.1}, "arena": {"seed": 3}}


def test_unknown_key_rejected_with_path():
    """Test unknown keys name their dotted location"""
    with pytest.raises(ConfigurationError, match="lr2.betta"):
        build_config({"lr2": {"betta": 0.5}})


def test_out_of_range_value_rejected():
    """Test field bounds are enforced"""
    with pytest.raises(ConfigurationError, match="lr2.beta"):
        build_config({"lr2": {"beta": 1.5}})


def test_method_names_normalised():
    """Test method strings are validated and normalised"""
    assert build_config({"method": {"name": "NORM:SJ"}}).method.name == "norm:sj"
    with pytest.raises(ConfigurationError):
        build_config({"method": {"name": "norm"}})
    with pytest.raises(ConfigurationError):
        build_config({"method": {"name": "qlearning"}})


def test_well_mixed_needs_population_size():
    """Test well-mixed topologies must state n_agents"""
    with pytest.raises(ConfigurationError):
        build_config({"topology": {"kind": "well_mixed"}})
    config = build_config({"topology": {"kind": "well_mixed", "n_agents": 50, "group_size": 4}})
    assert config.topology.population_size == 50


def test_sweep_grid_from_ranges():
    """Test [1, 2] x [-1, 0] at step 0.1 gives 11 x 11 values"""
    config = build_config({"game": {"T_range": [1.0, 2.0], "S_range": [-1.0, 0.0]}})
    assert len(config.game.t_values()) == 11
    assert config.game.t_values()[3] == 1.3
    assert config.game.s_values()[-1] == 0.0


def test_explicit_value_lists():
    """Test T and S may be lists"""
    config = build_config({"game": {"T": [1.30, 1.33], "S": -0.33}})
    assert config.game.t_values() == [1.30, 1.33]
    assert config.game.s_values() == [-0.33]


def test_seed_list_must_cover_replicates():
    """Test explicit seeds need one value per replicate"""
    with pytest.raises(ConfigurationError):
        build_config({"arena": {"replicates": 3, "seeds": [0, 1]}})
    config = build_config({"arena": {"replicates": 2, "seeds": [4, 9]}})
    assert [config.arena.replicate_seed(r) for r in range(2)] == [4, 9]
    assert build_config({"arena": {"seed": 5}}).arena.replicate_seed(2) == 7


def test_parse_override():
    """Test key=value overrides parse YAML scalars"""
    assert parse_override("lr2.beta=0.7") == ("lr2.beta", 0.7)
    assert parse_override("method.name=norm:sj") == ("method.name", "norm:sj")
    assert parse_override("game.T=[1.1, 1.2]") == ("game.T", [1.1, 1.2])
    with pytest.raises(ConfigurationError):
        parse_override("lr2.beta")


def test_precedence(tmp_path, monkeypatch):
    """Test defaults < file < overrides < flags < environment"""
    path = _write(tmp_path, {"lr2": {"beta": 0.5}, "arena": {"seed": 1, "workers": 2},
                             "output": {"directory": "from_file"}})
    config = load_config(path, ["lr2.beta=0.7", "arena.seed=2"], seed=3, output_dir="from_flag")
    assert config.lr2.beta == 0.7
    assert config.arena.seed == 3
    assert config.arena.workers == 2
    assert config.output.directory == "from_flag"

    monkeypatch.setenv(OUTPUT_DIR_ENV, "from_env")
    assert load_config(path, output_dir="from_flag").output.directory == "from_env"


def test_yaml_errors_report_location(tmp_path):
    """Test unparseable files report line and column"""
    path = tmp_path / "broken.yaml"
    path.write_text("lr2:\n  beta: [0.5\n")
    with pytest.raises(ConfigurationError, match="line"):
        load_config(path)


def test_missing_file(tmp_path):
    """Test a missing config file raises"""
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.yaml")


def test_effective_config_round_trip(tmp_path):
    """Test the dumped effective config reloads to an equal model"""
    config = build_config({"game": {"T": 1.3, "S": -0.3}, "method": {"name": "norm:is"}, "lr2": {"beta": 0.7}})
    path = dump_config(config, tmp_path / "effective_config.yaml")
    assert load_config(path) == config


def test_episode_settings():
    """Test episode settings are assembled from arena and reputation sections"""
    config = build_config({"arena": {"steps": 7, "learners": 3}, "reputation": {"assessment_mode": "hard"}})
    settings = config.episode_settings()
    assert settings.steps == 7
    assert settings.learners == 3
    assert settings.hard_assessments


@pytest.mark.parametrize("name", [
    "desk_lr2", "heatmap_sweep", "norms", "beta_sensitivity", "entropy_schedule",
    "adversarial", "interaction_structures", "full_scale",
])
def test_bundled_configs_load(name):
    """Test every bundled config validates"""
    config = load_config(CONFIG_DIR / f"{name}.yaml")
    assert config.arena.episodes >= 1
