"""Config-level entry points shared by the CLI and the HPO loop."""

from __future__ import annotations

from pathlib import Path

from torch import nn

from .checkpoint import load_checkpoint
from .config import RunConfig, dump_config
from .datasets import RasterDataModule
from .factory import build_model
from .tasks import MetricReport, RunRecord, fit, predict, test


def write_config_echo(cfg: RunConfig, run_dir) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "config.yaml"
    path.write_text(dump_config(cfg))
    return path


def run_fit(cfg: RunConfig, run_dir=None, verbose: bool = False) -> RunRecord:
    run_dir = Path(run_dir or cfg.trainer.artifacts_dir)
    write_config_echo(cfg, run_dir)
    data = RasterDataModule(cfg.data, cfg.task.kind, seed=cfg.trainer.seed)
    model = build_model(cfg.model, rng_seed=cfg.trainer.seed)
    return fit(model, data, cfg.task_config(), run_dir, cfg.to_dict(), verbose=verbose)


def load_trained_model(cfg: RunConfig, ckpt) -> nn.Module:
    state, _ = load_checkpoint(ckpt)
    model = build_model(cfg.model, rng_seed=cfg.trainer.seed)
    model.load_state_dict(state)
    model.eval()
    return model


def inference_tile(cfg: RunConfig, model: nn.Module) -> int:
    return (
        cfg.trainer.inference.tile
        or cfg.model.img_size
        or getattr(getattr(model, "backbone", None), "img_size", None)
        or 64
    )


def run_test(cfg: RunConfig, ckpt, split: str = "test") -> MetricReport:
    model = load_trained_model(cfg, ckpt)
    data = RasterDataModule(cfg.data, cfg.task.kind, seed=cfg.trainer.seed)
    return test(model, data, cfg.task_config(), split=split)


def run_predict(cfg: RunConfig, ckpt, out_dir=None, split: str | None = None) -> list[Path]:
    model = load_trained_model(cfg, ckpt)
    data = RasterDataModule(cfg.data, cfg.task.kind, seed=cfg.trainer.seed)
    ds = data.dataset(split or cfg.trainer.inference.split)
    images = [(s.id, s.image) for s in (ds.sample(i) for i in range(len(ds)))]
    out_dir = Path(out_dir or Path(cfg.trainer.artifacts_dir) / "predictions")
    tile = inference_tile(cfg, model)
    return predict(
        model,
        images,
        out_dir,
        cfg.task_config(),
        tile=tile,
        stride=cfg.trainer.inference.stride or tile,
        write_tif=cfg.trainer.inference.write_tiff,
    )
