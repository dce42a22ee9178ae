from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

Form = Literal["token", "grid"]


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FeatureInfo:
    """Static description of a feature-map set flowing between model stages.

    ``channels`` has one entry per item.  ``grid_size`` is the (h, w) patch
    grid for token-form items, ``reductions`` the spatial stride of each
    grid-form item relative to the input image.
    """

    channels: tuple[int, ...]
    form: Form
    grid_size: tuple[int, int] | None = None
    num_frames: int = 1
    reductions: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.channels:
            raise ValueError("a feature-map set must have at least one item")

    def __len__(self) -> int:
        return len(self.channels)

    def with_(self, **changes) -> "FeatureInfo":
        return replace(self, **changes)
