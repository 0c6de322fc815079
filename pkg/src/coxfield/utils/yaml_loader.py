from __future__ import annotations

from importlib.resources import files
from pathlib import Path

import yaml

from ..errors import ConfigurationError

# Paket mit den mitgelieferten Konfigurations-Presets.
_PRESET_PACKAGE = "coxfield.configs"


def load_yaml_with_fallback(name: str | Path) -> tuple[dict, str]:
    """
    Laedt eine Lauf-Konfiguration und gibt ``(mapping, quelle)`` zurueck.

    Suchreihenfolge:
    1. ``name`` als existierender Pfad (mit oder ohne ".yaml")
    2. Projektverzeichnis: ./configs/<name>.yaml
    3. Mitgelieferte Presets: coxfield.configs/<name>.yaml
    """
    raw = str(name)
    candidates = [Path(raw)]
    if not raw.endswith((".yaml", ".yml")):
        candidates.append(Path(f"{raw}.yaml"))
    candidates.append(Path("configs") / f"{Path(raw).stem}.yaml")

    for path in candidates:
        if path.is_file():
            return _read(path.read_text(encoding="utf-8"), str(path)), str(path)

    result = _try_load_preset(Path(raw).stem)
    if result is not None:
        return result, f"{_PRESET_PACKAGE}/{Path(raw).stem}.yaml"

    raise ConfigurationError(
        f"[load_yaml_with_fallback] configuration not found: {raw} "
        f"(searched: path as given, ./configs/, presets in {_PRESET_PACKAGE})"
    )


def list_presets() -> list[str]:
    """Namen aller mitgelieferten Presets (ohne Endung)."""
    return sorted(
        p.name.rsplit(".", 1)[0]
        for p in files(_PRESET_PACKAGE).iterdir()
        if p.name.endswith(".yaml")
    )


def _try_load_preset(stem: str) -> dict | None:
    """Versucht ein Preset aus dem Paket zu laden. Gibt None zurueck bei Fehler."""
    try:
        res_path = files(_PRESET_PACKAGE).joinpath(f"{stem}.yaml")
        if res_path.is_file():
            return _read(res_path.read_text(encoding="utf-8"), f"{_PRESET_PACKAGE}/{stem}.yaml")
    except (ImportError, ModuleNotFoundError, TypeError):
        pass
    return None


def _read(text: str, source: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"[load_yaml_with_fallback] {source}: invalid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"[load_yaml_with_fallback] {source}: top level must be a mapping")
    return data
