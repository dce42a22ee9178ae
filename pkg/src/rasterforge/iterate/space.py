from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping


class SpaceError(ValueError):
    pass


@dataclass
class ParamDef:
    """One tunable parameter, addressed by a dotted path into the run config."""

    path: str
    kind: str = "continuous"
    low: float | None = None
    high: float | None = None
    log: bool = False
    choices: list[Any] = field(default_factory=list)

    def __post_init__(self):
        if self.kind == "continuous":
            try:
                self.low = None if self.low is None else float(self.low)
                self.high = None if self.high is None else float(self.high)
            except (TypeError, ValueError):
                raise SpaceError(f"{self.path}: bounds must be numbers") from None
            if self.low is None or self.high is None or not self.low < self.high:
                raise SpaceError(f"{self.path}: continuous parameters need low < high")
            if self.log and self.low <= 0:
                raise SpaceError(f"{self.path}: log-scaled bounds must be positive")
        elif self.kind == "categorical":
            if not self.choices:
                raise SpaceError(f"{self.path}: categorical parameters need choices")
        else:
            raise SpaceError(f"{self.path}: unknown parameter kind {self.kind!r}")

    @property
    def transformed_bounds(self) -> tuple[float, float]:
        return self.to_internal(self.low), self.to_internal(self.high)

    def to_internal(self, x: float) -> float:
        return math.log(x) if self.log else float(x)

    def from_internal(self, u: float) -> float:
        x = math.exp(u) if self.log else float(u)
        return min(max(x, self.low), self.high)

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        return self.low <= value <= self.high


@dataclass
class ParamSpace:
    params: list[ParamDef]

    def __post_init__(self):
        if not self.params:
            raise SpaceError("optimization space is empty")
        paths = [p.path for p in self.params]
        if len(set(paths)) != len(paths):
            raise SpaceError("duplicate parameter paths")

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def paths(self) -> list[str]:
        return [p.path for p in self.params]

    def to_list(self) -> list[dict]:
        return [asdict(p) for p in self.params]

    @classmethod
    def from_list(cls, items) -> "ParamSpace":
        return cls([ParamDef(**d) for d in items])

    @classmethod
    def from_mapping(cls, block: Mapping[str, Mapping[str, Any]]) -> "ParamSpace":
        """Parse an ``optimization_space`` block.

        Each entry is ``path: {type: continuous, low, high, log}`` or
        ``path: {type: categorical, choices: [...]}``.
        """
        params = []
        for path, spec in block.items():
            spec = dict(spec or {})
            kind = spec.pop("type", spec.pop("kind", "continuous"))
            allowed = {"low", "high", "log"} if kind == "continuous" else {"choices"}
            unknown = set(spec) - allowed
            if unknown:
                raise SpaceError(f"{path}: unknown field(s) {sorted(unknown)}")
            params.append(ParamDef(path=path, kind=kind, **spec))
        return cls(params)
