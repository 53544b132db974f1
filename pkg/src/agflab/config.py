"""Strict JSON experiment configuration."""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigError
from .model import ModelConfig, OptimizerConfig
from .tasks import TaskSpec

__all__ = ["ExperimentConfig", "load_config", "config_hash", "deep_merge", "load_sweep"]

_TOP_KEYS = {"label", "model", "attention", "task", "optimizer", "epochs", "seed", "val_samples", "output_dir"}
_ATTENTION_KEYS = {"positional_mode", "pcm_v", "pcm_v_exp", "sco", "pcm_v_detach", "cross_positional", "use_abs_pe"}
_TYPES = {bool: (bool,), int: (int,), float: (int, float), str: (str,)}


def _check_section(d, cls, where, allowed=None):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    allowed = {f.name for f in fields(cls)} if allowed is None else allowed
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    types = {f.name: f.type for f in fields(cls)}
    for k, v in d.items():
        want = types.get(k)
        ok = _TYPES.get(want if isinstance(want, type) else None)
        if ok is None:
            continue
        if isinstance(v, bool) and want is not bool:
            raise ConfigError(f"{where}.{k} must be {want.__name__}, got a boolean")
        if not isinstance(v, ok):
            raise ConfigError(f"{where}.{k} must be {want.__name__}, got {type(v).__name__}")


@dataclass
class ExperimentConfig:
    """One training run: model + attention options, task, optimiser, epochs, seed, output directory."""

    label: str = "run"
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 10
    seed: int = 0
    val_samples: int = 500
    output_dir: str = "runs"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.val_samples < 1:
            raise ConfigError("val_samples must be at least 1")
        if self.task.vocab_size != self.model.vocab_size:
            raise ConfigError(
                f"task vocab_size {self.task.vocab_size} differs from model vocab_size {self.model.vocab_size}"
            )
        if self.task.max_len > self.model.seq_len:
            raise ConfigError(f"task max_len {self.task.max_len} exceeds model seq_len {self.model.seq_len}")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        for k, typ in (("label", str), ("epochs", int), ("seed", int), ("val_samples", int), ("output_dir", str)):
            if k in d and (not isinstance(d[k], typ) or isinstance(d[k], bool)):
                raise ConfigError(f"{k} must be {typ.__name__}")
        model = dict(d.get("model", {}))
        _check_section(model, ModelConfig, "model")
        att = d.get("attention", {})
        _check_section(att, ModelConfig, "attention", _ATTENTION_KEYS)
        model.update(att)
        seed = d.get("seed", 0)
        model["seed"] = seed
        task = dict(d.get("task", {}))
        _check_section(task, TaskSpec, "task")
        task.setdefault("vocab_size", model.get("vocab_size", ModelConfig.vocab_size))
        opt = d.get("optimizer", {})
        _check_section(opt, OptimizerConfig, "optimizer")
        try:
            return cls(
                label=d.get("label", "run"),
                model=ModelConfig(**model),
                task=TaskSpec(**task),
                optimizer=OptimizerConfig(**opt),
                epochs=d.get("epochs", 10),
                seed=seed,
                val_samples=d.get("val_samples", 500),
                output_dir=d.get("output_dir", "runs"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        d = asdict(self)
        return d

    def with_overrides(self, seed=None, mode=None, output_dir=None):
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if mode is not None:
            d["model"]["positional_mode"] = mode
        if output_dir is not None:
            d["output_dir"] = output_dir
        d["model"].pop("seed", None)
        return ExperimentConfig.from_dict(d)

    def validation_task(self):
        t = asdict(self.task)
        t["seed"] = self.task.seed + 1_000_003
        t["n_samples"] = self.val_samples
        return TaskSpec(**t)


def config_hash(d):
    """SHA-256 of the canonical JSON form of ``d``."""
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def load_config(path):
    return ExperimentConfig.from_dict(_read_json(path))


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_sweep(path):
    """Parse a sweep file ``{"base": {...}, "runs": [{"label": ..., <overrides>}, ...]}``."""
    d = _read_json(path)
    if not isinstance(d, dict) or set(d) - {"base", "runs"} or not isinstance(d.get("runs"), list) or not d["runs"]:
        raise ConfigError("sweep file must be an object with 'base' and a non-empty 'runs' list")
    return [ExperimentConfig.from_dict(deep_merge(d.get("base", {}), run)) for run in d["runs"]]
