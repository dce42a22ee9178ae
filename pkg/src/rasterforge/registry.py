"""Named component registries.

Each component kind (backbone, neck, decoder, head) has a :class:`RegistrySet`
holding one or more namespaced :class:`Registry` objects.  A name of the form
``"<ns>_<name>"`` whose prefix matches a registered namespace is routed to that
registry only; bare names are searched in priority order.
"""

from __future__ import annotations

import copy
import difflib
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator


class RegistryError(Exception):
    pass


class DuplicateName(RegistryError):
    pass


class InvalidName(RegistryError):
    pass


class NotFound(RegistryError, KeyError):
    def __init__(self, name: str, suggestions: list[str]):
        self.name = name
        self.suggestions = suggestions
        msg = f"component {name!r} not found"
        if suggestions:
            msg += f"; did you mean: {', '.join(suggestions)}"
        super().__init__(msg)

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class AmbiguousNamespace(RegistryError):
    pass


@dataclass
class ComponentSpec:
    """Constructor descriptor: a builder plus default keyword arguments."""

    name: str
    builder: Callable[..., Any]
    defaults: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def build(self, **kwargs: Any) -> Any:
        # deep copy so list/dict defaults are never shared between instances
        args = copy.deepcopy(self.defaults)
        args.update(kwargs)
        return self.builder(**args)


class Registry:
    def __init__(self, kind: str, namespace: str = ""):
        if "_" in namespace:
            raise InvalidName(f"namespace may not contain '_': {namespace!r}")
        self.kind = kind
        self.namespace = namespace
        self._entries: dict[str, ComponentSpec] = {}
        # namespaces a bare name may not start with (filled in by RegistrySet)
        self._reserved: set[str] = {namespace} if namespace else set()
        self._frozen = False

    def register(
        self,
        name: str,
        builder: Callable[..., Any] | None = None,
        defaults: dict[str, Any] | None = None,
        **metadata: Any,
    ):
        """Register ``builder`` under ``name``; usable as a decorator when
        ``builder`` is omitted."""
        if builder is None:
            def decorator(fn):
                self.register(name, fn, defaults, **metadata)
                return fn
            return decorator

        if self._frozen:
            raise RegistryError(f"{self.kind} registry is frozen")
        if not name:
            raise InvalidName("component name must be non-empty")
        prefix = name.split("_", 1)[0]
        if "_" in name and prefix in self._reserved:
            raise InvalidName(
                f"{name!r} starts with namespace prefix {prefix + '_'!r}"
            )
        if name in self._entries:
            raise DuplicateName(f"{self.kind} {name!r} already registered")
        self._entries[name] = ComponentSpec(name, builder, dict(defaults or {}), metadata)
        return builder

    def freeze(self) -> None:
        self._frozen = True

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> list[str]:
        return sorted(self._entries)

    def resolve(self, name: str) -> ComponentSpec:
        try:
            return self._entries[name]
        except KeyError:
            raise NotFound(name, _suggest(name, self._entries)) from None


class RegistrySet:
    """All registries for one component kind, in lookup priority order."""

    def __init__(self, kind: str, registries: list[Registry] | None = None):
        self.kind = kind
        self._registries: list[Registry] = []
        for reg in registries or []:
            self.add(reg)

    def add(self, registry: Registry) -> None:
        self._registries.append(registry)
        namespaces = {r.namespace for r in self._registries if r.namespace}
        for reg in self._registries:
            reg._reserved |= namespaces

    @property
    def registries(self) -> list[Registry]:
        return list(self._registries)

    def namespace(self, ns: str) -> Registry:
        found = [r for r in self._registries if r.namespace == ns]
        if len(found) > 1:
            raise AmbiguousNamespace(f"namespace {ns!r} is claimed by {len(found)} registries")
        if not found:
            raise KeyError(ns)
        return found[0]

    def resolve(self, qualified_name: str) -> ComponentSpec:
        if not qualified_name:
            raise InvalidName("component name must be non-empty")
        prefix, sep, rest = qualified_name.partition("_")
        if sep and prefix:
            owners = [r for r in self._registries if r.namespace == prefix]
            if len(owners) > 1:
                raise AmbiguousNamespace(
                    f"namespace {prefix!r} is claimed by {len(owners)} {self.kind} registries"
                )
            if owners:
                # namespaced lookups never fall through to other registries
                return owners[0].resolve(rest)
        for reg in self._registries:
            if qualified_name in reg:
                return reg.resolve(qualified_name)
        raise NotFound(qualified_name, _suggest(qualified_name, self.names()))

    def build(self, qualified_name: str, **kwargs: Any) -> Any:
        return self.resolve(qualified_name).build(**kwargs)

    def __contains__(self, qualified_name: str) -> bool:
        try:
            self.resolve(qualified_name)
        except RegistryError:
            return False
        return True

    def names(self, qualified: bool = False) -> list[str]:
        out = []
        for reg in self._registries:
            for n in reg.names():
                out.append(f"{reg.namespace}_{n}" if qualified and reg.namespace else n)
        return sorted(out)


def _suggest(name: str, candidates) -> list[str]:
    return difflib.get_close_matches(name, sorted(candidates), n=3, cutoff=0.5)


BACKBONE_REGISTRY = RegistrySet("backbone", [Registry("backbone", namespace="toy")])
NECK_REGISTRY = RegistrySet("neck", [Registry("neck")])
DECODER_REGISTRY = RegistrySet("decoder", [Registry("decoder")])
HEAD_REGISTRY = RegistrySet("head", [Registry("head")])

REGISTRIES: dict[str, RegistrySet] = {
    "backbone": BACKBONE_REGISTRY,
    "neck": NECK_REGISTRY,
    "decoder": DECODER_REGISTRY,
    "head": HEAD_REGISTRY,
}


def list_components(kind: str | None = None, qualified: bool = True) -> list[str]:
    """Names usable in configs; namespaced entries carry their prefix."""
    kinds = [kind] if kind else list(REGISTRIES)
    names: list[str] = []
    for k in kinds:
        names.extend(REGISTRIES[k].names(qualified=qualified))
    return sorted(names) if kind is None else names
