"""Basis, solution and metadata files.

Basis sets (CEM and POD alike) are ``.npz`` archives holding ``vectors``,
``tag``, one ``meta:<name>`` array per metadata field and the set-level
``info`` dict as JSON text.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .assembly import BasisSet


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, numpy values converted)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_basis(path, basis: BasisSet) -> None:
    arrays = {"vectors": basis.vectors, "tag": np.array(basis.tag), "info": np.array(dumps(basis.info))}
    for name, values in basis.meta.items():
        arrays[f"meta:{name}"] = values
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_basis(path) -> BasisSet:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = {key[5:]: data[key] for key in data.files if key.startswith("meta:")}
            return BasisSet(data["vectors"], str(data["tag"]), meta=meta, info=json.loads(str(data["info"])))
    except (OSError, KeyError, ValueError) as exc:
        raise ValueError(f"cannot read basis file {path}: {exc}") from exc


def save_states(path, terminal, layers, trajectories=None, **extra) -> None:
    """Terminal states (one row per layer, interior dofs) and optional full trajectories."""
    arrays = {"terminal": np.asarray(terminal), "layers": np.asarray(layers)}
    if trajectories is not None:
        for k, traj in zip(layers, trajectories):
            arrays[f"trajectory:{int(k)}"] = np.asarray(traj)
    arrays.update({key: np.asarray(v) for key, v in extra.items()})
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_states(path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as data:
            return {key: data[key] for key in data.files}
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read state file {path}: {exc}") from exc


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def content_hash(obj) -> str:
    return hashlib.sha256(dumps(obj).encode()).hexdigest()[:16]
