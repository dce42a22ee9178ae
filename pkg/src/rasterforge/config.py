"""Run configuration: strict YAML schema built from dataclasses.

A run config has six sections mirroring the toolkit layers::

    task:      kind, num_classes, monitor
    model:     backbone / necks / decoder / head recipe
    data:      dataset layout, bands, normalization, augmentation
    optimizer: lr, weight_decay
    scheduler: plateau factor / patience / threshold / min_lr
    trainer:   max_epochs, early_stop_patience, seed, artifacts_dir, inference tiling

Unknown keys are rejected with the nearest valid key; defaults are filled
in; relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import copy
import dataclasses
import difflib
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Union

import yaml

from .datasets import DataConfig
from .factory import ModelBuildSpec
from .tasks import TASK_KINDS, OptimizerConfig, SchedulerConfig, TaskConfig


class ConfigError(ValueError):
    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ConfigSyntaxError(ConfigError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        loc = f"line {line}, column {column}" if line is not None else ""
        super().__init__(message, loc)


class UnknownKey(ConfigError):
    def __init__(self, key: str, location: str, suggestion: str | None):
        self.key, self.suggestion = key, suggestion
        msg = f"unknown key {key!r}"
        if suggestion:
            msg += f" (did you mean {suggestion!r}?)"
        super().__init__(msg, location)


class MissingKey(ConfigError):
    pass


class ConfigTypeError(ConfigError):
    pass


class CrossFieldError(ConfigError):
    pass


@dataclass
class TaskSection:
    kind: str = "segmentation"
    num_classes: int | None = None
    monitor: str = "val_loss"


@dataclass
class InferenceConfig:
    tile: int | None = None
    stride: int | None = None
    split: str = "test"
    write_tiff: bool = False


@dataclass
class TrainerConfig:
    max_epochs: int = 100
    early_stop_patience: int = 20
    seed: int = 0
    artifacts_dir: str = "runs/default"
    inference: InferenceConfig = field(default_factory=InferenceConfig)


@dataclass
class RunConfig:
    task: TaskSection = field(default_factory=TaskSection)
    model: ModelBuildSpec = field(default_factory=ModelBuildSpec)
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def task_config(self) -> TaskConfig:
        return TaskConfig(
            kind=self.task.kind,
            num_classes=self.task.num_classes,
            ignore_index=self.data.ignore_index,
            max_epochs=self.trainer.max_epochs,
            early_stop_patience=self.trainer.early_stop_patience,
            monitor=self.task.monitor,
            optimizer=copy.deepcopy(self.optimizer),
            scheduler=copy.deepcopy(self.scheduler),
            seed=self.trainer.seed,
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------- schema walking


def _is_union(tp) -> bool:
    return typing.get_origin(tp) in (Union, types.UnionType)


def _type_name(tp) -> str:
    if _is_union(tp):
        return " or ".join(_type_name(a) for a in typing.get_args(tp))
    if tp is type(None):
        return "null"
    return getattr(tp, "__name__", str(tp))


def _convert(tp, value, loc: str):
    if tp is Any:
        return copy.deepcopy(value)
    if _is_union(tp):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _convert(arg, value, loc)
            except ConfigTypeError as e:
                errors.append(e)
        raise ConfigTypeError(f"expected {_type_name(tp)}, got {value!r}", loc)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, loc)
    origin = typing.get_origin(tp)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigTypeError(f"expected a list, got {value!r}", loc)
        return [_convert(item, v, f"{loc}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        _, item = typing.get_args(tp)
        if not isinstance(value, Mapping):
            raise ConfigTypeError(f"expected a mapping, got {value!r}", loc)
        return {str(k): _convert(item, v, f"{loc}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigTypeError(f"expected true/false, got {value!r}", loc)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigTypeError(f"expected an integer, got {value!r}", loc)
        return value
    if tp is float:
        if isinstance(value, bool):
            raise ConfigTypeError(f"expected a number, got {value!r}", loc)
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads "1e-4" as a string
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigTypeError(f"expected a number, got {value!r}", loc)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigTypeError(f"expected a string, got {value!r}", loc)
        return value
    raise ConfigTypeError(f"unsupported schema type {tp}", loc)


def from_dict(cls, data, loc: str = ""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigTypeError(f"expected a mapping, got {data!r}", loc or "<root>")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            close = difflib.get_close_matches(str(key), list(fields), n=1, cutoff=0.4)
            raise UnknownKey(str(key), loc or "<root>", close[0] if close else None)
    kwargs = {}
    for name, f in fields.items():
        sub = f"{loc}.{name}" if loc else name
        if name in data:
            kwargs[name] = _convert(hints[name], data[name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise MissingKey("required key is missing", sub)
    return cls(**kwargs)


def schema_has_path(path: str, cls=RunConfig) -> bool:
    """True if dotted ``path`` names a field of the run-config schema.

    Free-form ``args`` mappings accept any sub-key.
    """
    tp: Any = cls
    for part in path.split("."):
        if tp is Any:
            return True
        if _is_union(tp):
            tp = next(a for a in typing.get_args(tp) if a is not type(None))
        if typing.get_origin(tp) is dict:
            tp = typing.get_args(tp)[1]
            continue
        if not dataclasses.is_dataclass(tp):
            return False
        hints = typing.get_type_hints(tp)
        if part not in hints:
            return False
        tp = hints[part]
    return True


def set_path(data: dict, path: str, value) -> None:
    node = data
    parts = path.split(".")
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = node[part] = {}
        node = nxt
    node[parts[-1]] = value


def get_path(data, path: str):
    node = data
    for part in path.split("."):
        node = node[part] if isinstance(node, Mapping) else getattr(node, part)
    return node


def deep_merge(base: Mapping, override: Mapping) -> dict:
    """Right-most wins; nested mappings merge, everything else replaces."""
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# ---------------------------------------------------------------- parse / dump


def load_yaml(text: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        raise ConfigSyntaxError(
            str(e.problem or e), mark.line + 1 if mark else None, mark.column + 1 if mark else None
        ) from None
    except yaml.YAMLError as e:
        raise ConfigSyntaxError(str(e)) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigTypeError("config document must be a mapping", "<root>")
    return data


def _resolve(path: str | None, base_dir: Path | None) -> str | None:
    if path is None or base_dir is None:
        return path
    p = Path(path).expanduser()
    return str(p if p.is_absolute() else (base_dir / p).resolve())


def _normalize(cfg: RunConfig, base_dir: Path | None) -> RunConfig:
    task, model, data = cfg.task, cfg.model, cfg.data

    if task.kind not in TASK_KINDS:
        raise CrossFieldError(f"unknown task kind {task.kind!r}; choose from {list(TASK_KINDS)}", "task.kind")
    if task.kind != "regression":
        if task.num_classes is None or task.num_classes < 2:
            raise CrossFieldError("num_classes >= 2 is required", "task.num_classes")
    expected_kind = "classification" if task.kind == "classification" else "pixelwise"
    if data.kind != expected_kind:
        raise CrossFieldError(f"{task.kind} needs data.kind {expected_kind!r}", "data.kind")

    if model.head.kind is None:
        model.head.kind = task.kind
    elif model.head.kind != task.kind:
        raise CrossFieldError(f"head kind {model.head.kind!r} differs from task kind {task.kind!r}", "model.head.kind")
    if task.kind != "regression":
        if model.head.num_classes is None:
            model.head.num_classes = task.num_classes
        elif model.head.num_classes != task.num_classes:
            raise CrossFieldError("differs from task.num_classes", "model.head.num_classes")
        if data.num_classes is None:
            data.num_classes = task.num_classes
        elif data.num_classes != task.num_classes:
            raise CrossFieldError("differs from task.num_classes", "data.num_classes")

    if not data.dataset_bands:
        raise CrossFieldError("dataset_bands must list the stored bands", "data.dataset_bands")
    if len(set(data.dataset_bands)) != len(data.dataset_bands):
        raise CrossFieldError("duplicate band names", "data.dataset_bands")
    if data.output_bands is not None:
        extra = [b for b in data.output_bands if b not in data.dataset_bands]
        if extra:
            raise CrossFieldError(f"output_bands {extra} are not in dataset_bands", "data.output_bands")
    for name in ("means", "stds"):
        vals = getattr(data, name)
        if vals is not None and len(vals) != len(data.dataset_bands):
            raise CrossFieldError(f"needs one value per dataset band ({len(data.dataset_bands)})", f"data.{name}")
    if data.stds is not None and any(s <= 0 for s in data.stds):
        raise CrossFieldError("standard deviations must be positive", "data.stds")
    if data.batch_size < 1:
        raise CrossFieldError("must be >= 1", "data.batch_size")

    if model.backbone.bands is None:
        model.backbone.bands = data.bands_out
    elif list(model.backbone.bands) != data.bands_out:
        raise CrossFieldError(
            f"backbone bands {model.backbone.bands} differ from data output bands {data.bands_out}",
            "model.backbone.bands",
        )

    if cfg.optimizer.lr <= 0:
        raise CrossFieldError("must be positive", "optimizer.lr")
    if cfg.optimizer.weight_decay < 0:
        raise CrossFieldError("must be non-negative", "optimizer.weight_decay")
    if not 0 < cfg.scheduler.factor < 1:
        raise CrossFieldError("must lie in (0, 1)", "scheduler.factor")
    if cfg.trainer.max_epochs < 1:
        raise CrossFieldError("must be >= 1", "trainer.max_epochs")
    if not 1 <= cfg.trainer.early_stop_patience < cfg.trainer.max_epochs:
        raise CrossFieldError("must lie in [1, trainer.max_epochs)", "trainer.early_stop_patience")
    allowed = {"val_loss"}
    if task.kind == "segmentation":
        allowed |= {"val_miou", "val_accuracy"} | {f"val_iou_{c}" for c in range(task.num_classes)}
    elif task.kind == "classification":
        allowed |= {"val_accuracy"}
    else:
        allowed |= {"val_rmse", "val_mae"}
    if task.monitor not in allowed:
        raise CrossFieldError(f"cannot monitor {task.monitor!r}; choose from {sorted(allowed)}", "task.monitor")

    inf = cfg.trainer.inference
    if inf.tile is not None and inf.stride is not None and inf.stride > inf.tile:
        raise CrossFieldError("stride must not exceed tile", "trainer.inference.stride")

    if base_dir is not None:
        data.root = _resolve(data.root, base_dir)
        data.images_dir = _resolve(data.images_dir, base_dir)
        data.labels_dir = _resolve(data.labels_dir, base_dir)
        data.split_files = {k: _resolve(v, base_dir) for k, v in data.split_files.items()}
        model.backbone.pretrained = _resolve(model.backbone.pretrained, base_dir)
        cfg.trainer.artifacts_dir = _resolve(cfg.trainer.artifacts_dir, base_dir)
    return cfg


def config_from_dict(data: Mapping, base_dir=None) -> RunConfig:
    cfg = from_dict(RunConfig, data)
    return _normalize(cfg, Path(base_dir) if base_dir is not None else None)


def parse_config(text: str, base_dir=None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Parse and validate a run config document.

    ``overrides`` maps dotted paths (``"trainer.seed"``) to values applied
    on top of the document before validation.
    """
    data = load_yaml(text)
    for path, value in (overrides or {}).items():
        if not schema_has_path(path):
            raise UnknownKey(path, "<override>", None)
        set_path(data, path, value)
    return config_from_dict(data, base_dir)


def load_config(path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", str(path)) from None
    return parse_config(text, base_dir=path.parent.resolve(), overrides=overrides)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
