"""Dynamic class resolution for configuration entries.

Configuration files name kernels either by a short registry name
(``gaussian``) or by a dotted class path
(``mypackage.kernels.ExponentialKernel``). Both end up here.
"""
from __future__ import annotations

import importlib
from typing import Mapping

from ..errors import ConfigurationError


def load_class(qualified_name: str):
    """Import ``package.module.ClassName`` and return the class object."""
    if "." not in qualified_name:
        raise ConfigurationError(f"[load_class] '{qualified_name}' is not a dotted class path")
    module_name, class_name = qualified_name.rsplit(".", 1)
    try:
        module = importlib.import_module(module_name)
    except ImportError as e:
        raise ConfigurationError(f"[load_class] cannot import module '{module_name}': {e}") from e
    try:
        return getattr(module, class_name)
    except AttributeError as e:
        raise ConfigurationError(f"[load_class] module '{module_name}' has no class '{class_name}'") from e


def resolve_class(name: str, registry: Mapping[str, type], base: type) -> type:
    """Resolve *name* via *registry* first, then as a dotted path.

    The resolved class must be a subclass of *base*.
    """
    key = str(name).strip()
    cls = registry.get(key.lower())
    if cls is None:
        cls = load_class(key)
    if not (isinstance(cls, type) and issubclass(cls, base)):
        raise ConfigurationError(f"[resolve_class] '{name}' is not a {base.__name__}")
    return cls
