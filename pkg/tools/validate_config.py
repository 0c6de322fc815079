"""Validate run configurations against ``RunConfig``.

Usage: python tools/validate_config.py [DIR]   (default: ./configs)
Stops at the first invalid file; plot files are not required to exist.
"""
from pathlib import Path
import sys

from coxfield.config import RunConfig
from coxfield.errors import CoxFieldError
from coxfield.utils.yaml_loader import load_yaml_with_fallback


def validate_file(path: Path) -> int:
    try:
        mapping, source = load_yaml_with_fallback(path)
        RunConfig.from_mapping(mapping, base_dir=path.parent, source=source)
    except CoxFieldError as e:
        print(f"[ERROR] {path}: {e}", file=sys.stderr)
        return 2
    print(f"[OK] {path}")
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    base = Path(argv[0]) if argv else Path("configs")
    for f in sorted(base.rglob("*.yaml")):
        rc = validate_file(f)
        if rc:
            sys.exit(rc)
    sys.exit(0)


if __name__ == "__main__":
    main()
