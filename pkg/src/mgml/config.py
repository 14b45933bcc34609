"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key must be one of
:data:`KEYS`; unknown or repeated keys, unparsable values and missing required
keys all raise :class:`~mgml.errors.ConfigError` naming the key.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .anchors import CropConfig
from .data import SceneSpec
from .errors import ConfigError
from .model import BackboneConfig, ModelConfig, parse_branches
from .training import TrainConfig


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip().strip("[]")
    return tuple(int(t) for t in text.replace(",", " ").split()) if text.strip() else ()


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default); default None marks a required key
KEYS: dict[str, tuple] = {
    "backbone.preset": (str, None),
    "num_classes": (int, None),
    "crop.strategy": (str, None),
    "crop.sigma": (float, 0.5),
    "crop.k": (int, 2),
    "lambda.1": (float, 1.0),
    "lambda.2": (float, 0.5),
    "lambda.3": (float, 0.2),
    "lambda.4": (float, 0.5),
    "optimizer.lr": (float, None),
    "optimizer.momentum": (float, 0.9),
    "optimizer.weight_decay": (float, 0.0005),
    "schedule.epochs": (int, None),
    "schedule.batch_size": (int, 64),
    "schedule.milestones": (_int_list, (90, 150)),
    "schedule.factor": (float, 10.0),
    "train.seed": (int, 0),
    "train.runs": (int, 5),
    "train.branches": (str, "mb,ffb,fem"),
    "train.eval_every_epoch": (_bool, True),
    "data.source": (str, "synthetic"),
    "data.dir": (str, ""),
    "data.manifest": (str, ""),
    "data.per_class": (int, 50),
    "data.image_size": (int, 64),
    "data.motif_size": (int, 12),
    "data.noise_std": (float, 0.0),
    "data.jitter": (int, 0),
    "data.seed": (int, 0),
    "data.training_rate": (float, 0.5),
}


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    directory: str = ""
    manifest: str = ""
    scene: SceneSpec = SceneSpec()
    per_class: int = 50
    training_rate: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig
    branches: frozenset
    text: str

    def with_overrides(self, seed=None, branches=None, strategy=None, sigma=None, k=None) -> "RunConfig":
        """Apply CLI overrides; the canonical text is regenerated so checkpoints record them."""
        values = dict(self.values())
        if seed is not None:
            values["train.seed"] = str(seed)
        if branches is not None:
            values["train.branches"] = branches
        if strategy is not None:
            values["crop.strategy"] = strategy
        if sigma is not None:
            values["crop.sigma"] = str(sigma)
        if k is not None:
            values["crop.k"] = str(k)
        return parse_config("".join(f"{key} = {val}\n" for key, val in values.items()))

    def values(self) -> list[tuple[str, str]]:
        out = []
        for line in self.text.splitlines():
            key, _, val = line.partition("=")
            out.append((key.strip(), val.strip()))
        return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        raw[key] = val

    values = {}
    for key, (parse, default) in KEYS.items():
        if key not in raw:
            if default is None:
                raise ConfigError(f"{source}: missing required config key {key!r}")
            values[key] = default
            continue
        try:
            values[key] = parse(raw[key])
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {raw[key]!r} ({exc})") from None

    try:
        crop = CropConfig(values["crop.strategy"], values["crop.sigma"], values["crop.k"])
        lambdas = tuple(values[f"lambda.{i}"] for i in range(1, 5))
        size = values["data.image_size"]
        model = ModelConfig(BackboneConfig.preset(values["backbone.preset"]), crop, values["num_classes"],
                            lambdas, (size, size), values["train.seed"])
        train = TrainConfig(
            epochs=values["schedule.epochs"], batch_size=values["schedule.batch_size"],
            base_lr=values["optimizer.lr"], milestones=tuple(values["schedule.milestones"]),
            lr_factor=values["schedule.factor"], momentum=values["optimizer.momentum"],
            weight_decay=values["optimizer.weight_decay"], lambdas=lambdas, seed=values["train.seed"],
            runs=values["train.runs"], eval_every_epoch=values["train.eval_every_epoch"],
        )
        source_kind = values["data.source"]
        if source_kind not in ("synthetic", "directory"):
            raise ConfigError(f"data.source must be 'synthetic' or 'directory', got {source_kind!r}")
        if source_kind == "directory" and not values["data.dir"]:
            raise ConfigError("data.source = directory requires data.dir")
        scene = SceneSpec(values["num_classes"], size, values["data.motif_size"], values["data.noise_std"],
                          values["data.jitter"], values["data.seed"]) if source_kind == "synthetic" else SceneSpec()
        data = DataConfig(source_kind, values["data.dir"], values["data.manifest"], scene,
                          values["data.per_class"], values["data.training_rate"], values["data.seed"])
        branches = parse_branches(values["train.branches"])
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None

    canonical = "".join(f"{key} = {_render(values[key])}\n" for key in KEYS)
    return RunConfig(model, train, data, branches, canonical)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text(), str(p))


def replace_model(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, model=replace(cfg.model, **kw))
