"""Checkpoint container: named float64 arrays plus a JSON metadata block.

Stored as an uncompressed ``.npz`` archive.  Array entries are
``param/<name>``; ``__meta__`` holds UTF-8 JSON (model config, seed and any
caller extras such as a fitted feature schema).  Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ctranatd.errors import ConfigurationError
from ctranatd.fileio import write_npz

FORMAT = "ctranatd-checkpoint/1"


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    payload = {f"param/{name}": np.asarray(v, dtype=np.float64) for name, v in arrays.items()}
    meta = {"format": FORMAT, **meta}
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    write_npz(path, payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format") != FORMAT:
            raise ConfigurationError(f"{path} is not a {FORMAT} file")
        arrays = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
    return arrays, meta
