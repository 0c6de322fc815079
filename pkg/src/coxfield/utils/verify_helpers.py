"""Shared helpers for the verification keywords.

Wraps the ``okw-contract-utils`` tokens (``$IGNORE``, YES/NO) and matchers
so every ``Verify*`` keyword reports failures the same way.
"""
from __future__ import annotations

import math

from okw_contract_utils import MatchMode, is_match
from okw_contract_utils.tokens import OkwYesNo, assert_exists, is_ignore, parse_yes_no


def should_ignore(value: object) -> bool:
    """True for ``$IGNORE`` and its Robot spelling ``${IGNORE}`` (any case)."""
    if isinstance(value, str):
        sv = value.strip()
        return is_ignore(sv) or sv.upper() == "${IGNORE}"
    return False


def verify_yes_no(actual: bool, expected: str, context_label: str) -> None:
    """Compare a computed flag with a YES/NO expectation.

    Raises ``AssertionError`` through ``okw_contract_utils`` on mismatch.
    """
    yn = parse_yes_no(expected)
    actual = bool(actual)
    if (yn == OkwYesNo.YES and actual) or (yn == OkwYesNo.NO and not actual):
        return
    assert_exists(actual, yn, context=context_label)


def to_float(value: object, what: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be a number, got {value!r}") from None


def verify_close(actual: float, expected: float, tolerance: float, context_label: str) -> None:
    """``|actual - expected| <= tolerance`` or ``AssertionError``."""
    if not (math.isfinite(actual) and abs(actual - expected) <= tolerance):
        raise AssertionError(f"{context_label}: expected {expected:g} +/- {tolerance:g}, got {actual:.6g}")


_MODES = {"EXACT": MatchMode.EXACT, "WCM": MatchMode.WCM, "REGX": MatchMode.REGX}


def match_mode(mode: str) -> MatchMode:
    key = str(mode).strip().upper()
    if key not in _MODES:
        raise ValueError(f"unknown match mode '{mode}' (EXACT|WCM|REGX)")
    return _MODES[key]


def any_match(candidates, expected: str, mode: str = "WCM") -> bool:
    m = match_mode(mode)
    return any(is_match(c, expected, m).ok for c in candidates)
