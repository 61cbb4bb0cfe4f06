"""Single-file model checkpoints: one .npz holding arrays plus a JSON header."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_arrays(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a self-describing checkpoint. `meta` must be JSON-serializable."""
    payload = {f"arr_{k}": np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path} is not a checkpoint (missing metadata header)")
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        arrays = {k[4:]: data[k] for k in data.files if k.startswith("arr_")}
    return meta, arrays
