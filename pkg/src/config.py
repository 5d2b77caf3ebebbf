"""Centralized configuration for the interaction-pattern disentangling trainer.

Usage:
    from config import RunConfig
    cfg = RunConfig()                          # all defaults
    cfg = RunConfig.from_yaml("config.yaml")   # from file, strict keys
    cfg = RunConfig.from_env()                 # from environment variables
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import yaml

SPLIT_NAMES = ("train", "unseen_capability", "unseen_scale", "unseen_both")
ABLATION_VARIANTS = ("no-sparse", "no-cd", "no-cmi", "n-prototypes=K")


class ConfigError(ValueError):
    """Invalid run configuration. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass
class ModelConfig:
    """Network shape settings shared by the utility and mixing networks."""
    n_layers: int = 2            # K stacked OPT layers
    n_prototypes: int = 4        # N interaction prototypes per layer
    d_x: int = 32                # prototype / embedding dimension
    d_h: int = 32                # GRU hidden size
    d_ff: int = 64               # entity-wise feed-forward hidden size
    activation: str = "sparsemax"   # "softmax" under the w/o-Sparse ablation
    mixer: str = "qmix"          # "vdn" swaps in the additive backbone
    d_mix: int = 32
    hyper_hidden: int = 64
    cosine_cd: bool = False      # unit-normalise CD similarities


@dataclass
class LossConfig:
    """Coefficients of the auxiliary losses."""
    alpha: float = 0.5           # CD coefficient
    beta: float = 0.1            # CMI coefficient
    kl_clamp: float = 1e-8
    no_cd: bool = False
    no_cmi: bool = False

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.no_cd else float(self.alpha)

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.no_cmi else float(self.beta)


@dataclass
class TrainConfig:
    """Optimisation, exploration and bookkeeping settings."""
    lr: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    batch_size: int = 32
    buffer_size: int = 5000
    target_interval: int = 200   # counted in gradient updates
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal: int = 50_000  # counted in env steps
    total_steps: int = 200_000
    seed: int = 0
    grad_clip: float = 10.0
    eval_interval: int = 2000
    eval_episodes: int = 32
    eval_splits: List[str] = field(default_factory=lambda: ["train"])
    checkpoint_interval: int = 50_000
    n_collectors: int = 1
    dtype: str = "float32"
    use_mlflow: bool = False


@dataclass
class SplitRanges:
    """Inclusive [lo, hi] integer ranges sampled uniformly for one task split."""
    n_agents: List[int] = field(default_factory=lambda: [2, 3])
    n_prey: List[int] = field(default_factory=lambda: [1, 2])
    n_obstacles: List[int] = field(default_factory=lambda: [0, 2])
    attack_caps: List[int] = field(default_factory=lambda: [1, 2])
    defense_caps: List[int] = field(default_factory=lambda: [1, 3])

    def range_of(self, name: str) -> List[int]:
        return list(getattr(self, name))


def _default_splits() -> Dict[str, SplitRanges]:
    return {
        "train": SplitRanges(),
        "unseen_capability": SplitRanges(defense_caps=[1, 4]),
        "unseen_scale": SplitRanges(n_agents=[4, 4], n_prey=[3, 3]),
        "unseen_both": SplitRanges(n_agents=[4, 4], n_prey=[3, 3], defense_caps=[1, 4]),
    }


@dataclass
class EnvConfig:
    """Predator-Prey scenario family: geometry, reward table and task splits."""
    grid_w: int = 7
    grid_h: int = 7
    sight_range: int = 3
    horizon: int = 60
    capture_reward: float = 10.0
    win_bonus: float = 50.0
    step_penalty: float = -0.05
    require_feasible: bool = True
    splits: Dict[str, SplitRanges] = field(default_factory=_default_splits)

    @property
    def max_agents(self) -> int:
        return max(s.n_agents[1] for s in self.splits.values())

    @property
    def max_prey(self) -> int:
        return max(s.n_prey[1] for s in self.splits.values())

    @property
    def max_obstacles(self) -> int:
        return max(s.n_obstacles[1] for s in self.splits.values())

    @property
    def max_entities(self) -> int:
        return self.max_agents + self.max_prey + self.max_obstacles


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "env": EnvConfig,
}


@dataclass
class RunConfig:
    """Top-level configuration aggregating all sections."""
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    variant: str = "full"
    log_level: str = "INFO"

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_yaml(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False, default_flow_style=None)

    # ------------------------------------------------------------------
    # Loading
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, lines: Optional[dict] = None) -> "RunConfig":
        """Build a config from a nested dict, rejecting unknown keys."""
        lines = lines or {}
        cfg = cls()
        if not isinstance(raw, dict):
            raise ConfigError("top level of the config must be a mapping", line=1)
        for key, value in raw.items():
            line = lines.get((key,))
            if key in ("variant", "log_level"):
                if not isinstance(value, str):
                    raise ConfigError(f"'{key}' must be a string", line=line)
                setattr(cfg, key, value)
                continue
            if key not in _SECTIONS:
                raise ConfigError(
                    f"unknown section '{key}' (expected one of {sorted(_SECTIONS)})", line=line
                )
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"section '{key}' must be a mapping", line=line)
            section = getattr(cfg, key)
            for name, item in value.items():
                item_line = lines.get((key, name))
                if key == "env" and name == "splits":
                    section.splits = _parse_splits(item, lines)
                    continue
                _assign(section, key, name, item, item_line)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path: str) -> "RunConfig":
        """Load config from a YAML file. Unknown keys are a ``ConfigError``."""
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as f:
            text = f.read()
        raw, lines = _load_yaml_with_lines(text)
        return cls.from_dict(raw or {}, lines)

    @classmethod
    def from_env(cls, base: Optional["RunConfig"] = None) -> "RunConfig":
        """Override defaults from environment variables.

        Env vars follow pattern: OPTMARL_<SECTION>_<KEY> (uppercase).
        E.g. OPTMARL_TRAIN_TOTAL_STEPS=50000
        The result is validated; a bad override raises ConfigError.
        """
        cfg = base or cls()

        prefix = "OPTMARL_"
        for key, value in os.environ.items():
            if not key.startswith(prefix):
                continue
            parts = key[len(prefix):].lower().split("_", 1)
            if len(parts) != 2:
                continue
            section_name, field_name = parts
            if section_name not in _SECTIONS:
                continue
            section = getattr(cfg, section_name)
            if not hasattr(section, field_name):
                continue

            current = getattr(section, field_name)
            try:
                if isinstance(current, bool):
                    setattr(section, field_name, value.lower() in ("true", "1", "yes"))
                elif isinstance(current, int):
                    setattr(section, field_name, int(value))
                elif isinstance(current, float):
                    setattr(section, field_name, float(value))
                elif isinstance(current, str):
                    setattr(section, field_name, value)
            except (ValueError, TypeError):
                logging.getLogger(__name__).warning("Ignoring unparsable env override %s=%s", key, value)

        cfg.validate()
        return cfg

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> None:
        m, l, t, e = self.model, self.loss, self.train, self.env
        if m.n_layers < 1 or m.n_prototypes < 1:
            raise ConfigError("model.n_layers and model.n_prototypes must be >= 1")
        if min(m.d_x, m.d_h, m.d_ff, m.d_mix, m.hyper_hidden) < 1:
            raise ConfigError("model dimensions must be >= 1")
        if m.activation not in ("sparsemax", "softmax"):
            raise ConfigError(f"model.activation must be sparsemax or softmax, got '{m.activation}'")
        if m.mixer not in ("qmix", "vdn"):
            raise ConfigError(f"model.mixer must be qmix or vdn, got '{m.mixer}'")
        if l.alpha < 0 or l.beta < 0:
            raise ConfigError("loss.alpha and loss.beta must be >= 0")
        if l.kl_clamp <= 0:
            raise ConfigError("loss.kl_clamp must be > 0")
        if not 0.0 <= t.gamma < 1.0:
            raise ConfigError("train.gamma must lie in [0, 1)")
        if t.batch_size < 1 or t.buffer_size < t.batch_size:
            raise ConfigError("train.buffer_size must be >= train.batch_size >= 1")
        if t.target_interval < 1 or t.eval_interval < 1 or t.checkpoint_interval < 1:
            raise ConfigError("train intervals must be >= 1")
        if not (0.0 <= t.epsilon_end <= 1.0 and 0.0 <= t.epsilon_start <= 1.0):
            raise ConfigError("train.epsilon_start/end must lie in [0, 1]")
        if t.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")
        if t.n_collectors < 1:
            raise ConfigError("train.n_collectors must be >= 1")
        for split in t.eval_splits:
            if split not in SPLIT_NAMES:
                raise ConfigError(f"train.eval_splits: unknown split '{split}'")
        if e.sight_range < 0 or e.horizon < 1 or e.grid_w < 1 or e.grid_h < 1:
            raise ConfigError("env geometry must be positive")
        if "train" not in e.splits:
            raise ConfigError("env.splits must define a 'train' split")
        for name, split in e.splits.items():
            _validate_split(name, split)
        if e.grid_w * e.grid_h < e.max_entities:
            raise ConfigError(
                f"grid {e.grid_w}x{e.grid_h} cannot hold {e.max_entities} entities"
            )
        train = e.splits["train"]
        for name, split in e.splits.items():
            if name == "train":
                continue
            if not any(_extends_outside(split.range_of(p), train.range_of(p))
                       for p in ("n_agents", "n_prey", "n_obstacles", "attack_caps", "defense_caps")):
                raise ConfigError(f"split '{name}' has no parameter outside the training ranges")


def apply_variant(cfg: RunConfig, variant: str) -> RunConfig:
    """Apply one ablation variant in place and record it on the config."""
    if variant == "no-sparse":
        cfg.model.activation = "softmax"
    elif variant == "no-cd":
        cfg.loss.no_cd = True
    elif variant == "no-cmi":
        cfg.loss.no_cmi = True
    elif variant.startswith("n-prototypes="):
        try:
            n = int(variant.split("=", 1)[1])
        except ValueError:
            raise ConfigError(f"bad prototype count in variant '{variant}'")
        if n < 1:
            raise ConfigError("n-prototypes must be >= 1")
        cfg.model.n_prototypes = n
    else:
        raise ConfigError(
            f"unknown variant '{variant}'; valid variants: {', '.join(ABLATION_VARIANTS)}"
        )
    cfg.variant = variant if cfg.variant == "full" else f"{cfg.variant}+{variant}"
    return cfg


# ─────────────────────────────────────────────────────────────────────────────
# Helpers
# ─────────────────────────────────────────────────────────────────────────────

def _load_yaml_with_lines(text: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line=line)

    lines: dict = {}

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                key = (*prefix, str(k.value))
                lines[key] = k.start_mark.line + 1
                walk(v, key)

    if node is not None:
        walk(node, ())
    return raw, lines


def _assign(section, section_name: str, name: str, value, line: Optional[int]) -> None:
    known = {f.name for f in fields(section)}
    if name not in known:
        raise ConfigError(f"unknown key '{section_name}.{name}'", line=line)
    current = getattr(section, name)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{section_name}.{name}' must be true/false", line=line)
    elif isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{section_name}.{name}' must be an integer", line=line)
    elif isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{section_name}.{name}' must be a number", line=line)
        value = float(value)
    elif isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{section_name}.{name}' must be a string", line=line)
    elif isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{section_name}.{name}' must be a list", line=line)
        value = list(value)
    setattr(section, name, value)


def _parse_splits(raw, lines: dict) -> Dict[str, SplitRanges]:
    line = lines.get(("env", "splits"))
    if not isinstance(raw, dict):
        raise ConfigError("env.splits must be a mapping of split name to ranges", line=line)
    splits = _default_splits()
    for split_name, ranges in raw.items():
        split_line = lines.get(("env", "splits", split_name))
        if split_name not in SPLIT_NAMES:
            raise ConfigError(
                f"unknown split '{split_name}' (expected one of {list(SPLIT_NAMES)})", line=split_line
            )
        if not isinstance(ranges, dict):
            raise ConfigError(f"split '{split_name}' must be a mapping", line=split_line)
        split = splits[split_name]
        for key, value in ranges.items():
            key_line = lines.get(("env", "splits", split_name, key))
            if not hasattr(split, key):
                raise ConfigError(f"unknown key 'env.splits.{split_name}.{key}'", line=key_line)
            if (not isinstance(value, list) or len(value) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
                raise ConfigError(
                    f"'env.splits.{split_name}.{key}' must be an integer pair [lo, hi]", line=key_line
                )
            setattr(split, key, list(value))
    return splits


def _validate_split(name: str, split: SplitRanges) -> None:
    minimums = {"n_agents": 1, "n_prey": 1, "n_obstacles": 0, "attack_caps": 1, "defense_caps": 1}
    for param, minimum in minimums.items():
        lo, hi = split.range_of(param)
        if lo > hi:
            raise ConfigError(f"split '{name}': empty range for {param} [{lo}, {hi}]")
        if lo < minimum:
            raise ConfigError(f"split '{name}': {param} must be >= {minimum}")


def _extends_outside(candidate: List[int], reference: List[int]) -> bool:
    return candidate[0] < reference[0] or candidate[1] > reference[1]


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Configure structured logging for the trainer.

    Parameters
    ----------
    level : str
        Logging level (DEBUG, INFO, WARNING, ERROR).
    log_file : str, optional
        If provided, also log to this file.
    """
    fmt = "%(asctime)s | %(levelname)-8s | %(name)-30s | %(message)s"
    datefmt = "%Y-%m-%d %H:%M:%S"

    handlers: list[logging.Handler] = [
        logging.StreamHandler(),
    ]
    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=fmt,
        datefmt=datefmt,
        handlers=handlers,
        force=True,
    )

    # Suppress noisy third-party loggers
    for noisy in ["urllib3", "matplotlib", "mlflow", "alembic", "git"]:
        logging.getLogger(noisy).setLevel(logging.WARNING)
