"""Run configuration: TOML/JSON files, defaults, and seed derivation.

Every run hangs off a single global seed; components draw their own
deterministic sub-seeds through :func:`derive_seed` so that, e.g., fold
splits stay identical across models while training streams differ.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def derive_seed(*parts: int | str) -> int:
    """Stable 32-bit sub-seed from a root seed and named components."""
    key = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def load_config_file(path: str | Path) -> dict:
    """Parse a TOML (*.toml) or JSON (*.json) configuration file."""
    path = Path(path)
    if path.suffix == ".toml":
        with path.open("rb") as fh:
            return tomllib.load(fh)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raise ValueError(f"unsupported config format {path.suffix!r} (use .toml or .json)")


def merge_config(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict:
    """Recursive dict merge; override values win, nested tables merge."""
    merged = dict(base)
    for key, value in override.items():
        if (
            key in merged
            and isinstance(merged[key], Mapping)
            and isinstance(value, Mapping)
        ):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = value
    return merged


DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "dataset": {
        "min_token_count": 2,
        "binary_bow": False,
        "filter_suppliers": True,
    },
    "generator": {},
    "train": {},
    "grid": {
        "latent_dims": [4, 8, 16],
        "iteration_counts": [50, 200],
        "learning_rates": [0.01, 0.05],
        "lambda_regs": [0.0, 0.01, 0.1],
        "negative_counts": [1, 5],
    },
    "evaluate": {
        "n_outer": 8,
        "n_inner": 5,
        "ks": [1, 3, 5, 10, 20],
        "selection_metric": "ndcg",
        "selection_k": 10,
    },
}


def resolve_config(path: str | Path | None) -> dict:
    """Defaults overlaid with the config file, when one is given."""
    if path is None:
        return merge_config(DEFAULT_CONFIG, {})
    return merge_config(DEFAULT_CONFIG, load_config_file(path))
