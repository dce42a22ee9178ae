"""Training, evaluation and inference for segmentation, regression and
classification.

``fit`` runs AdamW with a reduce-on-plateau schedule, validates every epoch,
keeps the best checkpoint by the monitored value and stops early after
``early_stop_patience`` epochs without improvement.  Test metrics always come
from the best checkpoint.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import CheckpointMissing, save_checkpoint
from .datasets import RasterDataModule, load_image
from .features import ShapeMismatch
from .raster_io import tiff_available, write_raw_bsq, write_tiff

TASK_KINDS = ("segmentation", "regression", "classification")


class NonFiniteLoss(FloatingPointError):
    pass


class DataEmpty(ValueError):
    pass


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 0.05


@dataclass
class SchedulerConfig:
    factor: float = 0.5
    patience: int = 5
    threshold: float = 1e-8
    min_lr: float = 1e-7


@dataclass
class TaskConfig:
    kind: str = "segmentation"
    num_classes: int | None = 2
    ignore_index: int = -1
    max_epochs: int = 100
    early_stop_patience: int = 20
    monitor: str = "val_loss"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    seed: int = 0

    @property
    def mode(self) -> str:
        return monitor_mode(self.monitor)


def monitor_mode(name: str) -> str:
    return "min" if name.endswith(("loss", "rmse", "mae")) else "max"


# ---------------------------------------------------------------- metrics


@dataclass
class MetricReport:
    per_class_iou: list[float] | None = None
    miou: float | None = None
    accuracy: float | None = None
    rmse: float | None = None
    mae: float | None = None
    loss: float | None = None
    empty: bool = False

    def to_dict(self, prefix: str = "") -> dict[str, float]:
        out: dict[str, float] = {}
        if self.loss is not None:
            out[f"{prefix}loss"] = self.loss
        for name in ("miou", "accuracy", "rmse", "mae"):
            val = getattr(self, name)
            if val is not None:
                out[f"{prefix}{name}"] = val
        for c, iou in enumerate(self.per_class_iou or []):
            out[f"{prefix}iou_{c}"] = iou
        return out


def confusion_matrix(pred, target, num_classes: int, ignore_index: int = -1) -> np.ndarray:
    """Rows index the target class, columns the predicted class."""
    pred = np.asarray(pred).ravel()
    target = np.asarray(target).ravel()
    keep = target != ignore_index
    pred, target = pred[keep].astype(np.int64), target[keep].astype(np.int64)
    return np.bincount(target * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> MetricReport:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        return MetricReport(per_class_iou=[math.nan] * len(cm), miou=math.nan, accuracy=math.nan, empty=True)
    tp = np.diag(cm)
    union = cm.sum(0) + cm.sum(1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    # classes absent from both prediction and target are excluded
    present = union > 0
    return MetricReport(
        per_class_iou=[float(v) for v in iou],
        miou=float(iou[present].mean()),
        accuracy=float(tp.sum() / total),
    )


def compute_iou(pred, target, num_classes: int, ignore_index: int = -1) -> MetricReport:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    return iou_from_confusion(confusion_matrix(pred, target, num_classes, ignore_index))


# ---------------------------------------------------------------- schedule


class EarlyStopping:
    """Counts epochs without strict improvement of the monitored value."""

    def __init__(self, patience: int, mode: str = "min"):
        self.patience = patience
        self.mode = mode
        self.best = math.inf if mode == "min" else -math.inf
        self.best_epoch: int | None = None
        self.bad_epochs = 0
        self.epoch = 0

    def is_better(self, value: float) -> bool:
        return value < self.best if self.mode == "min" else value > self.best

    def step(self, value: float) -> tuple[bool, bool]:
        """Record one epoch; return ``(improved, should_stop)``."""
        self.epoch += 1
        if self.is_better(value):
            self.best, self.best_epoch, self.bad_epochs = value, self.epoch, 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


def make_optimizer(model: nn.Module, cfg: OptimizerConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


def make_scheduler(optimizer, cfg: SchedulerConfig, mode: str = "min"):
    return torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer,
        mode=mode,
        factor=cfg.factor,
        patience=cfg.patience,
        threshold=cfg.threshold,
        min_lr=cfg.min_lr,
    )


# ---------------------------------------------------------------- losses


def task_loss(output: torch.Tensor, label: torch.Tensor, task: TaskConfig) -> tuple[torch.Tensor, int]:
    """Summed loss over valid elements and the number of valid elements."""
    if task.kind == "segmentation":
        label = label.long()
        n = int((label != task.ignore_index).sum())
        loss = F.cross_entropy(output, label, ignore_index=task.ignore_index, reduction="sum")
        return loss, n
    if task.kind == "regression":
        pred = output[:, 0]
        valid = torch.isfinite(label)
        diff = torch.where(valid, pred - torch.nan_to_num(label), torch.zeros_like(pred))
        return (diff ** 2).sum(), int(valid.sum())
    if task.kind == "classification":
        return F.cross_entropy(output, label.long(), reduction="sum"), label.shape[0]
    raise ValueError(f"unknown task kind {task.kind!r}")


class _MetricAccumulator:
    def __init__(self, task: TaskConfig):
        self.task = task
        self.loss_sum = 0.0
        self.count = 0
        k = task.num_classes or 0
        self.cm = np.zeros((k, k), dtype=np.int64) if task.kind != "regression" else None
        self.sq_err = 0.0
        self.abs_err = 0.0

    def update(self, output: torch.Tensor, label: torch.Tensor, loss_sum: float, n: int) -> None:
        self.loss_sum += loss_sum
        self.count += n
        if self.task.kind == "regression":
            valid = torch.isfinite(label)
            diff = (output[:, 0] - label)[valid].double()
            self.sq_err += float((diff ** 2).sum())
            self.abs_err += float(diff.abs().sum())
            return
        pred = output.argmax(dim=1)
        k = self.task.num_classes
        lab = label.long().reshape(-1)
        pred = pred.reshape(-1)
        keep = lab != self.task.ignore_index if self.task.kind == "segmentation" else torch.ones_like(lab, dtype=torch.bool)
        idx = lab[keep] * k + pred[keep]
        self.cm += torch.bincount(idx, minlength=k * k).reshape(k, k).numpy()

    def report(self) -> MetricReport:
        loss = self.loss_sum / self.count if self.count else math.nan
        if self.task.kind == "regression":
            n = max(self.count, 1)
            return MetricReport(loss=loss, rmse=math.sqrt(self.sq_err / n), mae=self.abs_err / n, empty=self.count == 0)
        rep = iou_from_confusion(self.cm)
        rep.loss = loss
        if self.task.kind == "classification":
            rep.per_class_iou, rep.miou = None, None
        return rep


def evaluate(model: nn.Module, loader: Iterable, task: TaskConfig) -> MetricReport:
    model.eval()
    acc = _MetricAccumulator(task)
    with torch.no_grad():
        for batch in loader:
            out = model(batch["image"])
            loss, n = task_loss(out, batch["label"], task)
            acc.update(out, batch["label"], float(loss), n)
    return acc.report()


# ---------------------------------------------------------------- fit


@dataclass
class RunRecord:
    config: dict[str, Any] = field(default_factory=dict)
    history: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int | None = None
    best_value: float | None = None
    monitor: str = "val_loss"
    checkpoint: str | None = None
    test_metrics: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    seed: int = 0
    status: str = "complete"
    error: str | None = None

    def best_row(self) -> dict[str, float]:
        if self.best_epoch is None:
            return {}
        return next(r for r in self.history if r["epoch"] == self.best_epoch)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _history_columns(rows: Sequence[dict]) -> list[str]:
    metric_keys = sorted({k for r in rows for k in r} - {"epoch", "train_loss", "val_loss", "lr"})
    return ["epoch", "train_loss", "val_loss", *metric_keys, "lr"]


def write_history_csv(path, rows: Sequence[dict]) -> None:
    cols = _history_columns(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])


def read_history_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def _train_epoch(model, loader, optimizer, task: TaskConfig) -> float:
    model.train()
    total, count = 0.0, 0
    for batch in loader:
        out = model(batch["image"])
        loss_sum, n = task_loss(out, batch["label"], task)
        if n == 0:
            continue
        loss = loss_sum / n
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"training loss became {loss.item()}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        total += float(loss_sum.detach())
        count += n
    return total / count if count else math.nan


def _bands_of(model: nn.Module) -> list[str] | None:
    backbone = getattr(model, "backbone", None)
    bands = getattr(backbone, "in_bands", None)
    return list(bands) if bands is not None else None


def fit(
    model: nn.Module,
    data: RasterDataModule,
    task: TaskConfig,
    run_dir=None,
    config_snapshot: dict[str, Any] | None = None,
    verbose: bool = False,
) -> RunRecord:
    start = time.perf_counter()
    record = RunRecord(config=config_snapshot or {}, monitor=task.monitor, seed=task.seed)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    if len(data.dataset("train")) == 0 or len(data.dataset("val")) == 0:
        raise DataEmpty("train and val splits must be non-empty")

    torch.manual_seed(task.seed)
    optimizer = make_optimizer(model, task.optimizer)
    scheduler = make_scheduler(optimizer, task.scheduler, task.mode)
    stopper = EarlyStopping(task.early_stop_patience, task.mode)
    best_state = None

    try:
        for epoch in range(1, task.max_epochs + 1):
            lr = optimizer.param_groups[0]["lr"]
            train_loss = _train_epoch(model, data.loader("train", epoch), optimizer, task)
            val = evaluate(model, data.loader("val"), task)
            row = {"epoch": epoch, "train_loss": train_loss, **val.to_dict("val_"), "lr": lr}
            record.history.append(row)
            if task.monitor not in row:
                raise KeyError(f"monitored metric {task.monitor!r} not among {sorted(row)}")
            value = row[task.monitor]
            if not math.isfinite(value):
                raise NonFiniteLoss(f"monitored {task.monitor} is {value} at epoch {epoch}")
            improved, stop = stopper.step(value)
            if improved:
                best_state = copy.deepcopy(model.state_dict())
                record.best_epoch, record.best_value = epoch, value
                if run_dir is not None:
                    meta = {"bands": _bands_of(model), "epoch": epoch, "config": record.config}
                    record.checkpoint = str(save_checkpoint(run_dir / "best.ckpt", best_state, meta))
            if verbose:
                print(f"epoch {epoch:3d} train_loss {train_loss:.4f} " +
                      " ".join(f"{k} {v:.4f}" for k, v in row.items() if k.startswith("val_")), flush=True)
            scheduler.step(value)
            if stop:
                break
    except NonFiniteLoss as e:
        record.status, record.error = "failed", f"NonFiniteLoss: {e}"

    if best_state is not None:
        model.load_state_dict(best_state)
        if data.has_split("test"):
            record.test_metrics = test(model, data, task).to_dict("test_")
    record.wall_time = time.perf_counter() - start

    if run_dir is not None:
        write_history_csv(run_dir / "metrics.csv", record.history)
        report = {k: v for k, v in record.to_dict().items() if k not in ("history", "config")}
        (run_dir / "report.json").write_text(json.dumps(report, indent=2, default=str))
    return record


def test(model: nn.Module, data: RasterDataModule, task: TaskConfig, split: str = "test") -> MetricReport:
    return evaluate(model, data.loader(split), task)


test.__test__ = False  # keep pytest from collecting it


# ---------------------------------------------------------------- inference


def window_starts(size: int, tile: int, stride: int) -> list[int]:
    """Tile origins along one axis; the last tile is shifted inward to fit."""
    if size <= tile:
        return [0]
    starts = list(range(0, size - tile + 1, stride))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def _forward_one(model: nn.Module, image: torch.Tensor) -> torch.Tensor:
    return model(image.unsqueeze(0))[0]


def sliding_window_predict(model: nn.Module, image: torch.Tensor, tile: int, stride: int | None = None) -> torch.Tensor:
    """Average overlapping tile logits over a ``(T, C, H, W)`` image.

    Images smaller than ``tile`` along an axis are reflect-padded up to the
    tile size first and cropped afterwards.
    """
    stride = stride or tile
    if stride > tile:
        raise ValueError(f"stride {stride} exceeds tile {tile}")
    if image.ndim == 3:
        image = image.unsqueeze(0)
    H, W = image.shape[-2:]
    pad_h, pad_w = max(0, tile - H), max(0, tile - W)
    if pad_h or pad_w:
        arr = np.pad(image.numpy(), [(0, 0), (0, 0), (0, pad_h), (0, pad_w)], mode="reflect")
        image = torch.from_numpy(arr)
    Hp, Wp = image.shape[-2:]

    model.eval()
    total = None
    counts = torch.zeros(Hp, Wp)
    with torch.no_grad():
        for y in window_starts(Hp, tile, stride):
            for x in window_starts(Wp, tile, stride):
                logits = _forward_one(model, image[..., y:y + tile, x:x + tile])
                if total is None:
                    total = torch.zeros(logits.shape[0], Hp, Wp, dtype=logits.dtype)
                total[:, y:y + tile, x:x + tile] += logits
                counts[y:y + tile, x:x + tile] += 1
    return (total / counts)[:, :H, :W]


def predict(
    model: nn.Module,
    images: Sequence[tuple[str, Any]],
    out_dir,
    task: TaskConfig,
    tile: int,
    stride: int | None = None,
    data_cfg=None,
    write_tif: bool = False,
) -> list[Path]:
    """Write one ``<id>_pred.bsq`` raster per input.

    ``images`` holds ``(id, image)`` pairs where image is a ``(T, C, H, W)``
    tensor/array or a path (loaded with ``data_cfg``).  Segmentation writes
    the argmax mask as int16, regression the float32 prediction.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sample_id, image in images:
        if isinstance(image, (str, Path)):
            image = load_image(image, data_cfg)
        image = torch.as_tensor(np.asarray(image), dtype=torch.float32)
        if task.kind == "classification":
            model.eval()
            with torch.no_grad():
                cls = int(_forward_one(model, image).argmax())
            written.append(write_raw_bsq(out_dir / f"{sample_id}_pred.bsq", np.full((1, 1), cls, np.int16)))
            continue
        logits = sliding_window_predict(model, image, tile, stride)
        if task.kind == "regression":
            out = logits[0].numpy().astype(np.float32)
        else:
            out = logits.argmax(0).numpy().astype(np.int16)
        path = write_raw_bsq(out_dir / f"{sample_id}_pred.bsq", out)
        written.append(path)
        if write_tif and tiff_available():
            write_tiff(out_dir / f"{sample_id}_pred.tif", out)
    return written


__all__ = [
    "CheckpointMissing",
    "DataEmpty",
    "EarlyStopping",
    "MetricReport",
    "NonFiniteLoss",
    "OptimizerConfig",
    "RunRecord",
    "SchedulerConfig",
    "TaskConfig",
    "compute_iou",
    "confusion_matrix",
    "evaluate",
    "fit",
    "predict",
    "sliding_window_predict",
    "test",
]
