"""
Experiment Configuration
YAML files with nested sections or dotted keys, validated into pydantic models
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator, model_validator

from src.agents.episode import EpisodeSettings
from src.agents.learner import Hyperparameters
from src.agents.population import MethodSpec
from src.core.topology import TopologyKind
from src.error_handling import ConfigurationError, LabError

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "LR2_OUTPUT_DIR"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GameConfig(Section):
    """Single (T, S) values, explicit lists, or [start, stop] ranges sampled at grid_step"""
    T: Union[float, List[float]] = 1.1
    S: Union[float, List[float]] = -0.1
    T_range: Optional[Tuple[float, float]] = None
    S_range: Optional[Tuple[float, float]] = None
    grid_step: float = Field(0.1, gt=0)

    @staticmethod
    def _grid(values, bounds, step) -> List[float]:
        if bounds is not None:
            start, stop = bounds
            if stop < start:
                raise ConfigurationError(f"Sweep range [{start}, {stop}] is empty")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + k * step, 10) for k in range(count)]
        grid = [float(values)] if isinstance(values, (int, float)) else [float(v) for v in values]
        if not grid:
            raise ConfigurationError("Sweep grids must be nonempty")
        return grid

    def t_values(self) -> List[float]:
        return self._grid(self.T, self.T_range, self.grid_step)

    def s_values(self) -> List[float]:
        return self._grid(self.S, self.S_range, self.grid_step)


class TopologyConfig(Section):
    kind: Literal["von_neumann", "moore", "honeycomb", "well_mixed"] = "von_neumann"
    side: int = Field(10, ge=3)
    n_agents: Optional[int] = Field(None, ge=2)
    group_size: int = Field(4, ge=1)
    resample_each_step: bool = True

    @model_validator(mode="after")
    def _population_size(self):
        if self.kind == "well_mixed" and self.n_agents is None:
            raise ValueError("well_mixed topology needs n_agents")
        return self

    @property
    def topology_kind(self) -> TopologyKind:
        return TopologyKind(self.kind)

    @property
    def population_size(self) -> int:
        return self.n_agents if self.kind == "well_mixed" else self.side * self.side


class MethodConfig(Section):
    name: str = "lr2"
    adversarial_fraction: float = Field(0.0, ge=0.0, le=1.0)

    @field_validator("name")
    @classmethod
    def _known_method(cls, value: str) -> str:
        try:
            return MethodSpec.parse(value).label
        except LabError as e:
            raise ValueError(str(e))

    def spec(self) -> MethodSpec:
        return MethodSpec.parse(self.name)


class LR2Config(Section):
    beta: float = Field(0.6, ge=0.0, le=1.0)
    mu: float = Field(0.2, ge=0.0)
    gamma: float = Field(0.99, ge=0.0, le=1.0)
    learning_rate: float = Field(3e-4, gt=0.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    ppo_clip: float = Field(0.2, gt=0.0)
    ppo_epochs: int = Field(4, ge=1)
    minibatch_size: int = Field(5, ge=1)
    value_clip: float = Field(0.2, gt=0.0)
    value_coef: float = Field(0.5, ge=0.0)
    entropy_start: float = Field(0.1, ge=0.0)
    entropy_end: float = Field(0.0, ge=0.0)
    entropy_schedule: Literal["anneal", "fixed"] = "anneal"
    dilemma_update: Literal["ppo", "reinforce"] = "ppo"
    evaluation_optimizer: Literal["adam", "sgd"] = "adam"

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(**self.model_dump())


class ReputationConfig(Section):
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    assessment_mode: Literal["soft", "hard"] = "soft"


class ArenaSection(Section):
    n_arenas: int = Field(1, ge=1)
    episodes: int = Field(2000, ge=1)
    steps: int = Field(20, ge=1)
    replicates: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    seeds: Optional[List[int]] = None
    learners: int = Field(1, ge=1)
    learner_workers: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    reset_each_episode: bool = True
    checkpoint_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _seed_list(self):
        if self.seeds is not None and len(self.seeds) < self.replicates:
            raise ValueError(f"seeds lists {len(self.seeds)} values for {self.replicates} replicates")
        return self

    def replicate_seed(self, replicate: int) -> int:
        return self.seeds[replicate] if self.seeds is not None else self.seed + replicate


class OutputConfig(Section):
    directory: str = "results"
    run_id: Optional[str] = None
    snapshot_episodes: List[int] = Field(default_factory=list)
    stream_every: int = Field(100, ge=1)
    checkpoint_text: bool = False


class LoggingSection(Section):
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    every: int = Field(100, ge=1)
    to_file: bool = True


class ExperimentConfig(Section):
    """Validated experiment description; every section has defaults"""
    game: GameConfig = Field(default_factory=GameConfig)
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    method: MethodConfig = Field(default_factory=MethodConfig)
    lr2: LR2Config = Field(default_factory=LR2Config)
    reputation: ReputationConfig = Field(default_factory=ReputationConfig)
    arena: ArenaSection = Field(default_factory=ArenaSection)
    output: OutputConfig = Field(default_factory=OutputConfig)
    logging: LoggingSection = Field(default_factory=LoggingSection)

    def episode_settings(self) -> EpisodeSettings:
        return EpisodeSettings(
            steps=self.arena.steps,
            alpha=self.reputation.alpha,
            hard_assessments=self.reputation.assessment_mode == "hard",
            reset_each_episode=self.arena.reset_each_episode,
            learners=self.arena.learners,
        )


def set_path(tree: Dict[str, Any], dotted: str, value: Any):
    """Assign tree[a][b][c] = value for dotted 'a.b.c', creating sections"""
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"'{key}' in '{dotted}' is a value, not a section")
        node = child
    node[keys[-1]] = value


def expand_dotted(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Nested sections first, then dotted keys on top"""
    tree: Dict[str, Any] = {}
    dotted = []
    for key, value in raw.items():
        if "." in str(key):
            dotted.append((key, value))
        elif isinstance(value, dict):
            tree[key] = expand_dotted(value)
        else:
            tree[key] = value
    for key, value in dotted:
        set_path(tree, key, value)
    return tree


def parse_override(text: str) -> Tuple[str, Any]:
    """'lr2.beta=0.7' -> ('lr2.beta', 0.7); values are parsed as YAML scalars or lists"""
    if "=" not in text:
        raise ConfigurationError(f"Override '{text}' must look like section.key=value")
    key, raw_value = text.split("=", 1)
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Override '{text}' has an unparseable value: {e}")
    return key.strip(), value


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigurationError(f"Cannot parse {path}{where}: {getattr(e, 'problem', e)}")
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} must hold a mapping of sections")
    return expand_dotted(raw)


def build_config(tree: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(tree)
    except PydanticValidationError as e:
        problems = [f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigurationError("Invalid configuration:\n  " + "\n  ".join(problems))


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = (),
                output_dir: Optional[str] = None, workers: Optional[int] = None,
                seed: Optional[int] = None) -> ExperimentConfig:
    """defaults < file < overrides < flags < LR2_OUTPUT_DIR"""
    tree = read_config_file(path) if path is not None else {}
    for text in overrides:
        key, value = parse_override(text)
        set_path(tree, key, value)
    if output_dir is not None:
        set_path(tree, "output.directory", output_dir)
    if workers is not None:
        set_path(tree, "arena.workers", workers)
    if seed is not None:
        set_path(tree, "arena.seed", seed)
    if os.getenv(OUTPUT_DIR_ENV):
        set_path(tree, "output.directory", os.getenv(OUTPUT_DIR_ENV))

    config = build_config(tree)
    logger.debug(f"Loaded configuration from {path or 'defaults'} with {len(overrides)} override(s)")
    return config


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    """Effective config with every default resolved; reloading it gives an equal model"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
    return path
