"""Contract code as plain Python classes.

A contract class declares its method table with decorators::

    class Bank(ContractCode):
        @method("public", "addBalance()", payable=True)
        def addBalance(self, ctx):
            ...

Code objects hold no state; storage lives on the deployed instance and is
reached through the ``ctx`` handed to every handler.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, ClassVar

from ..token_core import method_id

CODE_REGISTRY: dict[str, type["ContractCode"]] = {}
FALLBACK_SELECTOR = b""


class Visibility(str, enum.Enum):
    EXTERNAL = "external"
    PUBLIC = "public"
    INTERNAL = "internal"
    PRIVATE = "private"

    @property
    def callable_externally(self) -> bool:
        return self in (Visibility.EXTERNAL, Visibility.PUBLIC)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    signature: str
    selector: bytes
    visibility: Visibility
    payable: bool
    handler: Callable


def method(visibility: str = "public", signature: str | None = None, payable: bool = False):
    def wrap(fn):
        fn._smacs_method = (Visibility(visibility), signature or f"{fn.__name__}()", payable)
        return fn
    return wrap


def fallback(payable: bool = True):
    def wrap(fn):
        fn._smacs_fallback = payable
        return fn
    return wrap


class ContractCode:
    """Base class for deployable fixtures; subclasses register by class name."""

    methods: ClassVar[dict[bytes, MethodSpec]]
    by_name: ClassVar[dict[str, MethodSpec]]
    fallback_spec: ClassVar[MethodSpec | None]

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        methods, by_name, fb = {}, {}, None
        for klass in reversed(cls.__mro__):
            for attr, fn in vars(klass).items():
                if hasattr(fn, "_smacs_method"):
                    vis, sig, payable = fn._smacs_method
                    spec = MethodSpec(attr, sig, method_id(sig), vis, payable, fn)
                    methods[spec.selector] = spec
                    by_name[attr] = spec
                elif hasattr(fn, "_smacs_fallback"):
                    fb = MethodSpec("fallback", "", FALLBACK_SELECTOR, Visibility.EXTERNAL,
                                    fn._smacs_fallback, fn)
        cls.methods, cls.by_name, cls.fallback_spec = methods, by_name, fb
        CODE_REGISTRY[cls.__name__] = cls

    def setup(self, ctx, **params) -> None:
        """Constructor; runs once at deployment with a context for storage writes."""

    @classmethod
    def lookup(cls, selector: bytes) -> MethodSpec | None:
        if selector == FALLBACK_SELECTOR:
            return cls.fallback_spec
        return cls.methods.get(selector)

    @classmethod
    def selector(cls, name: str) -> bytes:
        return cls.by_name[name].selector

    @classmethod
    def method_names(cls) -> dict[bytes, str]:
        return {sel: spec.name for sel, spec in cls.methods.items()}

    @classmethod
    def method_table(cls) -> list[tuple[str, str, str]]:
        """``(name, signature, visibility)`` rows; heads must agree on this."""
        return sorted((s.name, s.signature, s.visibility.value) for s in cls.methods.values())
