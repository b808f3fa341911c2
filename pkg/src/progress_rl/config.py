"""Experiment configuration: strict key-tree schema, overrides, content hash and run manifest."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import __version__
from .composer import RewardWeights
from .env import EnvConfig, HouseParams
from .errors import ConfigError, GenerationError, InvalidInputError
from .estimator import EstimatorProfile, ProfileKind
from .learn.bc import BCConfig
from .learn.ppo import PPOConfig
from .learn.train import TrainConfig
from .persistence import atomic_write, canonical_json
from .progress_core import DEFAULT_HALF_WIDTH
from .scenegraph import TaskKind

RUN_DIR_ENV = "VLLR_RUN_DIR"
TOKEN_ENV = "VLLR_ENDPOINT_TOKEN"

# Keys whose default is None accept either null or a value of the listed type.
NULLABLE = {
    "train.stage1_steps": int,
    "train.filter_threshold": float,
    "train.gamma_stage1": float,
    "endpoint.estimator_url": str,
    "endpoint.decomposer_url": str,
    "out_dir": str,
}

DEFAULTS = {
    "seed": 0,
    "out_dir": None,
    "houses": {
        "width": 9, "height": 9, "rooms_min": 1, "rooms_max": 3, "objects_min": 1, "objects_max": 2,
        "min_room_side": 2,
        "train_seed_start": 1, "train_seed_end": 1_000_000, "train_count": 200,
        "test_seed_start": 1_000_000, "test_seed_end": 2_000_000, "test_count": 100,
    },
    "env": {"num_actions": EnvConfig.num_actions, "view_radius": 3, "max_steps_factor": 16, "max_steps_cap": 600,
            "rooms_required": 2},
    "bc": {"demos": 300, "epochs": 30, "lr": 1e-3, "minibatch_size": 256, "hidden": [128, 128],
           "max_grad_norm": 5.0},
    "ppo": PPOConfig().to_dict(),
    "train": {
        "stage2_steps": 100_000, "stage1_steps": None,
        "weights": RewardWeights().to_dict(),
        "estimator": EstimatorProfile.preset("late_gradual").to_dict(),
        "use_filter": True, "filter_half_width": DEFAULT_HALF_WIDTH, "filter_threshold": None,
        "gamma_stage1": None, "task_kinds": ["objnav"], "eval_every": 0, "value_hidden": [128, 128],
    },
    "eval": {"episodes_per_task": 200, "periodic_episodes": 50, "task_kinds": ["objnav"], "seed": 7,
             "greedy": True},
    "endpoint": {"estimator_url": None, "decomposer_url": None, "timeout": 10.0, "retries": 3,
                 "backoff_base": 0.5, "every_k": 1},
}


def _check(tree: dict, defaults: dict, prefix: str = "") -> dict:
    """Merge ``tree`` over ``defaults``, rejecting unknown keys and wrong types."""
    if not isinstance(tree, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(tree).__name__}")
    unknown = sorted(set(tree) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    out = {}
    for key, default in defaults.items():
        path = prefix + key
        if key not in tree:
            out[key] = copy.deepcopy(default)
            continue
        val = tree[key]
        if isinstance(default, dict):
            out[key] = _check(val, default, path + ".")
            continue
        want = NULLABLE.get(path) if default is None else type(default)
        if val is None:
            if path not in NULLABLE:
                raise ConfigError(f"{path}: null not allowed")
            out[key] = None
        elif want is float and isinstance(val, int) and not isinstance(val, bool):
            out[key] = float(val)
        elif want is list:
            if not isinstance(val, list):
                raise ConfigError(f"{path}: expected a list, got {type(val).__name__}")
            out[key] = list(val)
        elif not isinstance(val, want) or (want is int and isinstance(val, bool)):
            raise ConfigError(f"{path}: expected {want.__name__}, got {type(val).__name__} {val!r}")
        else:
            out[key] = val
    return out


def parse_override(text: str):
    """``a.b.c=value`` with the value read as YAML (so 0.1, true, null, [1, 2] all work)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return key.split("."), value


def apply_overrides(tree: dict, overrides) -> dict:
    tree = copy.deepcopy(tree)
    for text in overrides or ():
        path, value = parse_override(text)
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part} is not a section")
        node[path[-1]] = value
    return tree


def read_config_file(path) -> dict:
    """YAML or JSON (JSON is valid YAML, so one parser covers both)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    return {} if tree is None else tree


@dataclass(frozen=True)
class ExperimentConfig:
    tree: dict

    @classmethod
    def from_tree(cls, tree: dict | None = None) -> "ExperimentConfig":
        cfg = cls(_check(tree or {}, DEFAULTS))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()) -> "ExperimentConfig":
        tree = read_config_file(path) if path is not None else {}
        return cls.from_tree(apply_overrides(tree, overrides))

    def __getitem__(self, key):
        return self.tree[key]

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.tree).encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps(self.tree, sort_keys=True, indent=2) + "\n"

    def replace(self, overrides) -> "ExperimentConfig":
        return ExperimentConfig.from_tree(apply_overrides(self.tree, overrides))

    # --- typed views -------------------------------------------------------
    def house_params(self) -> HouseParams:
        h = self.tree["houses"]
        return HouseParams(**{k: h[k] for k in ("width", "height", "rooms_min", "rooms_max", "objects_min",
                                                  "objects_max", "min_room_side")})

    def env_config(self) -> EnvConfig:
        return EnvConfig(**self.tree["env"])

    def bc_config(self) -> BCConfig:
        b = dict(self.tree["bc"])
        b.pop("demos")
        return BCConfig(**{**b, "hidden": tuple(b["hidden"])}, seed=self.tree["seed"])

    def ppo_config(self) -> PPOConfig:
        return PPOConfig(**self.tree["ppo"])

    def train_config(self) -> TrainConfig:
        t = self.tree["train"]
        return TrainConfig(
            stage2_steps=t["stage2_steps"], stage1_steps=t["stage1_steps"], ppo=self.ppo_config(),
            weights=RewardWeights(**t["weights"]), estimator=EstimatorProfile(**t["estimator"]),
            use_filter=t["use_filter"], filter_half_width=t["filter_half_width"],
            filter_threshold=t["filter_threshold"], gamma_stage1=t["gamma_stage1"],
            task_kinds=tuple(t["task_kinds"]), eval_every=t["eval_every"],
            value_hidden=tuple(t["value_hidden"]), seed=self.tree["seed"],
        )

    def validate(self):
        """Build every typed view once so range errors surface at load time."""
        try:
            self.house_params().validate()
            self.env_config()
            self.bc_config()
            self.train_config()
            for k in self.tree["train"]["task_kinds"] + self.tree["eval"]["task_kinds"]:
                TaskKind(k)
        except (InvalidInputError, GenerationError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        h = self.tree["houses"]
        for split in ("train", "test"):
            if h[f"{split}_seed_end"] <= h[f"{split}_seed_start"]:
                raise ConfigError(f"houses.{split}_seed_end must exceed houses.{split}_seed_start")
            if h[f"{split}_count"] < 0:
                raise ConfigError(f"houses.{split}_count must be >= 0")
        if h["train_seed_start"] < h["test_seed_end"] and h["test_seed_start"] < h["train_seed_end"]:
            raise ConfigError("train and test house seed ranges overlap")
        e = self.tree["eval"]
        if e["episodes_per_task"] < 1 or e["periodic_episodes"] < 1:
            raise ConfigError("eval episode counts must be >= 1")
        if self.tree["endpoint"]["every_k"] < 1:
            raise ConfigError("endpoint.every_k must be >= 1")


def profile_override(name: str) -> list:
    """``--profile`` as a list of overrides selecting a named estimator preset."""
    try:
        prof = EstimatorProfile.preset(name)
    except ValueError:
        choices = ", ".join(k.value for k in ProfileKind if k is not ProfileKind.CUSTOM)
        raise ConfigError(f"unknown profile {name!r}; choose from {choices}") from None
    # the estimator seed stays whatever the config says
    return [f"train.estimator.{k}={json.dumps(v)}" for k, v in prof.to_dict().items() if k != "seed"]


def resolve_run_dir(out: str | None, cfg: ExperimentConfig, command: str) -> Path:
    """--out, then config out_dir, then $VLLR_RUN_DIR/<command>-<hash prefix>, then ./runs/..."""
    if out:
        return Path(out)
    if cfg["out_dir"]:
        return Path(cfg["out_dir"])
    base = os.environ.get(RUN_DIR_ENV) or "runs"
    return Path(base) / f"{command}-{cfg.hash[:12]}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    started: str = field(default_factory=_now)
    finished: str | None = None
    code_version: str = f"progress_rl {__version__} / python {platform.python_version()}"
    stage_steps: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    status: str = "running"

    def write(self, run_dir) -> Path:
        return atomic_write(Path(run_dir) / "manifest.json", json.dumps(self.__dict__, sort_keys=True, indent=2) + "\n")

    def finish(self, run_dir, status: str = "ok") -> Path:
        self.finished = _now()
        self.status = status
        return self.write(run_dir)
