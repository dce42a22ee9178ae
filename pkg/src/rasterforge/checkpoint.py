"""Checkpoint container: flat ``name -> tensor`` map plus a metadata record."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Mapping

import torch

from . import __version__


class CheckpointMissing(FileNotFoundError):
    pass


def save_checkpoint(path: str | os.PathLike, state_dict: Mapping[str, torch.Tensor], metadata: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"toolkit_version": __version__, **metadata}
    payload = {"state_dict": {k: v.detach().cpu().clone() for k, v in state_dict.items()}, "metadata": meta}
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointMissing(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    return payload["state_dict"], payload.get("metadata", {})
