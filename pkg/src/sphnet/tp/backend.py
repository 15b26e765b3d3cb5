"""Kernel backend selection.

The compiled extension is used when it imports; ``SPHNET_BACKEND=numpy``
forces the numpy loops and ``SPHNET_BACKEND=compiled`` makes a missing
extension an error instead of a silent fallback.
"""
from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _reference

log = logging.getLogger(__name__)

BACKEND_ENV = "SPHNET_BACKEND"

try:
    from . import _kernels as _compiled
except ImportError as exc:  # extension not built
    _compiled = None
    _import_error: ImportError | None = exc
else:
    _import_error = None


def available() -> dict[str, ModuleType]:
    out = {"numpy": _reference}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def resolve(name: str | None = None) -> tuple[str, ModuleType]:
    name = (name or os.environ.get(BACKEND_ENV, "") or "auto").lower()
    if name == "auto":
        return ("compiled", _compiled) if _compiled is not None else ("numpy", _reference)
    if name == "numpy":
        return "numpy", _reference
    if name == "compiled":
        if _compiled is None:
            raise ImportError(f"compiled kernels requested but unavailable: {_import_error}")
        return "compiled", _compiled
    raise ValueError(f"unknown backend {name!r}; expected auto, numpy or compiled")


_active_name, _active = resolve()
if _active_name == "numpy" and _compiled is None:
    log.info("compiled kernels unavailable (%s); using numpy loops", _import_error)


def active() -> ModuleType:
    return _active


def active_name() -> str:
    return _active_name


def set_backend(name: str) -> str:
    """Switch backends at runtime; returns the previous backend name."""
    global _active_name, _active
    prev = _active_name
    _active_name, _active = resolve(name)
    return prev
