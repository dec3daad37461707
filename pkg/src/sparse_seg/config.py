"""Run configuration: one JSON document with architecture, optimizer, patch and path blocks."""

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .data import PatchSpec
from .model import ArchitectureSpec
from .optim import OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    manifest: str = None
    root: str = None
    patches: str = None
    model: str = "model.weights"
    loss_log: str = "loss.csv"
    report: str = "report.json"
    per_image: str = "per_image.csv"
    overlay_dir: str = "overlays"


@dataclass(frozen=True)
class EvalConfig:
    test_fraction: float = 0.05
    record_timing: bool = False
    class_weights: tuple = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    architecture: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    patch: PatchSpec = field(default_factory=PatchSpec)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self):
        return asdict(self)


BLOCKS = {"architecture": ArchitectureSpec, "optimizer": OptimizerConfig,
          "patch": PatchSpec, "evaluation": EvalConfig, "paths": PathsConfig}


def _build(cls, block, values):
    if not isinstance(values, dict):
        raise ConfigError(f"{block}: expected an object, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config key: {block}.{key}")
    values = dict(values)
    for key in ("rotations", "class_weights"):
        if isinstance(values.get(key), list):
            values[key] = tuple(values[key])
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{block}: {exc}") from None


def from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key in data:
        if key != "seed" and key not in BLOCKS:
            raise ConfigError(f"unknown config key: {key}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")
    kwargs = {"seed": seed}
    for block, cls in BLOCKS.items():
        values = data.get(block, {})
        if block == "patch" and isinstance(values, dict):
            values = dict(values)
            values.setdefault("seed", seed)
        kwargs[block] = _build(cls, block, values)
    return RunConfig(**kwargs)


def load_config(path=None):
    if path is None:
        return from_dict({})
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(data)


def override(cfg, **dotted):
    """Return a copy with ``block__key=value`` overrides applied (None values skipped)."""
    blocks = {}
    seed = cfg.seed
    for name, value in dotted.items():
        if value is None:
            continue
        if name == "seed":
            seed = value
            continue
        block, key = name.split("__")
        blocks.setdefault(block, {})[key] = value
    out = replace(cfg, seed=seed)
    if seed != cfg.seed and cfg.patch.seed == cfg.seed:
        blocks.setdefault("patch", {}).setdefault("seed", seed)
    for block, values in blocks.items():
        out = replace(out, **{block: replace(getattr(out, block), **values)})
    return out


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
