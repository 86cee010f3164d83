"""
Settings loaded from the environment (.env supported).

Keys (all optional):
- SUDEST_OUTPUT_DIR  where run files are written (default logs/runs)
- SUDEST_SEED        master seed, 0 = draw from entropy and record it
- SUDEST_WORKERS     worker processes for experiment runners (default: all cores)
- SUDEST_DENSE_CAP   largest full-space dimension for dense-only operations
- SUDEST_PROGRESS    show tqdm progress bars

Precedence used by the CLI: flags > --config JSON file > env/.env > defaults.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict

import numpy as np
from dotenv import load_dotenv

from utils.errors import ValidationError

load_dotenv()

VERSION = "0.3.0"

DEFAULTS: Dict[str, Any] = {
    "output_dir": "logs/runs",
    "seed": 0,
    "workers": os.cpu_count() or 1,
    "dense_cap": 4096,
    "progress": True,
}


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes")


def env_settings() -> Dict[str, Any]:
    """Standardvärden, överskrivna av det som finns i miljön (.env)."""
    out = dict(DEFAULTS)
    out["output_dir"] = os.getenv("SUDEST_OUTPUT_DIR", out["output_dir"])
    out["seed"] = int(os.getenv("SUDEST_SEED", str(out["seed"])))
    out["workers"] = int(os.getenv("SUDEST_WORKERS", str(out["workers"])))
    out["dense_cap"] = int(os.getenv("SUDEST_DENSE_CAP", str(out["dense_cap"])))
    out["progress"] = _env_bool("SUDEST_PROGRESS", out["progress"])
    return out


def load_config_file(path: str | Path | None) -> Dict[str, Any]:
    if not path:
        return {}
    p = Path(path)
    with p.open("r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValidationError(f"config file {p} must hold a JSON object")
    return data


def resolve(
    flags: Dict[str, Any],
    config_path: str | Path | None = None,
    defaults: Dict[str, Any] | None = None,
) -> Dict[str, Any]:
    """
    Merge settings: flags that are not None win over the config file,
    which wins over env/.env and built-in defaults (`defaults` holds the
    command-specific ones).
    """
    resolved = dict(defaults or {})
    resolved.update(env_settings())
    resolved.update(load_config_file(config_path))
    for k, v in flags.items():
        if v is not None:
            resolved[k] = v
    return resolved


def resolve_seed(seed: int) -> int:
    """0 betyder 'dra en seed ur OS-entropin'; det dragna värdet är det som loggas."""
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if seed:
        return seed
    return int(np.random.SeedSequence().entropy % (2 ** 64 - 1)) + 1
