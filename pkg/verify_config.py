"""
Verify a scenario config document and the .env overrides in effect
"""
import os
import sys
from pathlib import Path
from typing import Optional

from dotenv import dotenv_values

from sim_config import load_config, read_document
from sim_errors import ConfigParseError, ConfigValidationError

ENV_KEYS = ("NEUROSIM_OUT_DIR", "NEUROSIM_WORKERS", "NEUROSIM_LOG_LEVEL")


def verify(config_path: Optional[str] = None, env_path: Optional[str] = None) -> bool:
    ok = True
    print("=" * 60)
    print("SIMULATOR CONFIG VERIFICATION")
    print("=" * 60)

    env_file = Path(env_path) if env_path else Path(os.getcwd()) / ".env"
    print(f"\n1. Environment file: {env_file}")
    print(f"   Exists: {env_file.exists()}")
    file_values = dotenv_values(env_file) if env_file.exists() else {}
    for key in ENV_KEYS:
        value = os.getenv(key) or file_values.get(key)
        source = "environment" if os.getenv(key) else (".env" if key in file_values else "default")
        print(f"   {key}: {value if value else '(unset)'} [{source}]")
    workers = os.getenv("NEUROSIM_WORKERS") or file_values.get("NEUROSIM_WORKERS")
    if workers is not None and not (workers.isdigit() and int(workers) >= 1):
        print(f"   ⚠️  NEUROSIM_WORKERS must be a positive integer, got {workers!r}")
        ok = False

    if config_path is None:
        print("\n2. No config document given")
        print("\n" + "=" * 60)
        return ok

    path = Path(config_path)
    print(f"\n2. Config document: {path}")
    if not path.exists():
        print("   ⚠️  File not found")
        print("\n" + "=" * 60)
        return False
    text = path.read_text(encoding="utf-8-sig")

    print("\n3. Parsed keys:")
    try:
        for key, (value, line) in read_document(text).items():
            print(f"   Line {line}: {key}={value}")
    except ConfigParseError as e:
        print(f"   ⚠️  {e}")
        print("\n" + "=" * 60)
        return False

    print("\n4. Validation:")
    try:
        cfg = load_config(text, name=path.stem)
    except (ConfigParseError, ConfigValidationError) as e:
        print(f"   ⚠️  {e}")
        ok = False
    else:
        print(f"   ✅ {cfg.n_neurons} neuron(s), {len(cfg.stimuli)} stimulus line(s), "
              f"{cfg.scan_buses} scan bus(es), default mode {cfg.default_mode.describe()}")

    print("\n" + "=" * 60)
    return ok


if __name__ == "__main__":
    sys.exit(0 if verify(sys.argv[1] if len(sys.argv) > 1 else None) else 1)
