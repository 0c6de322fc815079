"""Pytest-Konfig fuer coxfield Unit-Tests.

Stellt Fixtures bereit die:
- Robot Framework BuiltIn patchen (kein laufender RF-Server noetig)
- reproduzierbare Zufallsgeneratoren liefern
- kleine Fenster, Gitter und Muster fuer schnelle Numerik-Tests bauen
"""

import sys
import types
from unittest.mock import MagicMock

import numpy as np
import pytest

from coxfield.geometry import PointPattern, Window, discretize


# ---- Robot Framework BuiltIn Mock ----------------------------------------

class FakeBuiltIn:
    """Minimaler Mock fuer robot.libraries.BuiltIn.BuiltIn."""

    _variables = {}

    def get_variable_value(self, name, default=None):
        return self._variables.get(name, default)

    def set_test_variable(self, name, value):
        self._variables[name] = value

    def set_suite_variable(self, name, value):
        self._variables[name] = value


@pytest.fixture(autouse=True)
def _patch_robot():
    """Patcht robot.api und robot.libraries.BuiltIn fuer headless Tests."""
    fake_bi = FakeBuiltIn()
    fake_bi._variables = {}

    fake_logger = MagicMock()

    # Fake robot.api.deco.keyword / library = identity decorators
    def fake_keyword(name=None, tags=None, types=None):
        def decorator(func):
            return func
        if callable(name):
            return name
        return decorator

    def fake_library(cls=None, scope=None, version=None, doc_format=None, listener=None, auto_keywords=False):
        if isinstance(cls, type):
            return cls
        return lambda c: c

    robot_mod = types.ModuleType("robot")
    robot_api = types.ModuleType("robot.api")
    robot_deco = types.ModuleType("robot.api.deco")
    robot_libs = types.ModuleType("robot.libraries")
    robot_bi_mod = types.ModuleType("robot.libraries.BuiltIn")

    robot_api.logger = fake_logger
    robot_api.deco = robot_deco
    robot_deco.keyword = fake_keyword
    robot_deco.library = fake_library

    class BuiltInFactory:
        """Gibt immer dieselbe FakeBuiltIn-Instanz zurueck."""
        def __new__(cls):
            return fake_bi

    robot_bi_mod.BuiltIn = BuiltInFactory

    robot_mod.api = robot_api
    robot_mod.libraries = robot_libs
    robot_libs.BuiltIn = robot_bi_mod

    saved = {}
    for mod_name, mod in [
        ("robot", robot_mod),
        ("robot.api", robot_api),
        ("robot.api.deco", robot_deco),
        ("robot.libraries", robot_libs),
        ("robot.libraries.BuiltIn", robot_bi_mod),
    ]:
        saved[mod_name] = sys.modules.get(mod_name)
        sys.modules[mod_name] = mod

    yield fake_bi

    for mod_name, orig in saved.items():
        if orig is None:
            sys.modules.pop(mod_name, None)
        else:
            sys.modules[mod_name] = orig


@pytest.fixture(autouse=True)
def _fresh_context():
    """Leert den globalen Keyword-Kontext vor und nach jedem Test."""
    from coxfield.runtime.context import context
    context.reset()
    yield context
    context.reset()


# ---- Numerik-Fixtures ----------------------------------------------------

@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def window10():
    return Window(0.0, 10.0, 0.0, 10.0)


@pytest.fixture
def grid10(window10):
    return discretize(window10, 1.0)


@pytest.fixture
def window40():
    return Window(0.0, 40.0, 0.0, 40.0)


@pytest.fixture
def parents10(window10):
    """Drei unmarkierte Eltern im 10 m x 10 m Fenster."""
    return PointPattern(np.array([[2.5, 2.5], [7.5, 4.5], [5.0, 8.0]]), window10)


@pytest.fixture
def marked_parents10(window10):
    return PointPattern(np.array([[2.5, 2.5], [7.5, 4.5], [5.0, 8.0]]), window10, np.array([1.0, 2.0, 4.0]))


def write_csv(path, header, rows):
    """Schreibt eine kleine Musterdatei (``x,y[,mark]``)."""
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
