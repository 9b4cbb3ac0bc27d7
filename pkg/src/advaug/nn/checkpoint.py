"""Versioned checkpoint container: named arrays plus a JSON metadata block.

The file is an uncompressed ``.npz`` archive. Array names are free-form
strings (``params/<net>/<name>``, ``adam/<net>/m/<name>``, ...); two
reserved members hold the format version and the JSON metadata.
"""

from __future__ import annotations

import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
_FORMAT_KEY = "__format_version__"
_META_KEY = "__meta__"


class CheckpointError(IOError):
    pass


def _to_numpy(value):
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().numpy()
    return np.asarray(value)


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Atomically write ``arrays`` and ``meta`` to ``path``."""
    path = Path(path)
    payload = {name: _to_numpy(v) for name, v in arrays.items()}
    payload[_FORMAT_KEY] = np.array(FORMAT_VERSION)
    payload[_META_KEY] = np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    try:
        data = np.load(path, allow_pickle=False)
    except (ValueError, OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if not isinstance(data, np.lib.npyio.NpzFile):
        raise CheckpointError(f"{path}: not a checkpoint archive")
    with data:
        if _FORMAT_KEY not in data.files:
            raise CheckpointError(f"{path}: not a checkpoint (no format version)")
        version = int(data[_FORMAT_KEY])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        meta = json.loads(bytes(data[_META_KEY]).decode())
        arrays = {k: data[k] for k in data.files if k not in (_FORMAT_KEY, _META_KEY)}
    return arrays, meta


def module_arrays(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: dict, prefix: str) -> None:
    state = {}
    for k, ref in module.state_dict().items():
        key = f"{prefix}/{k}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks array {key!r}")
        state[k] = torch.from_numpy(np.array(arrays[key])).to(ref.dtype)
    module.load_state_dict(state)
