"""Named parameter storage and the on-disk checkpoint directory format."""
from __future__ import annotations

import json
from collections.abc import MutableMapping
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import as_tensor, read_sstb, write_sstb

MANIFEST = "manifest.json"


class ParameterStore(MutableMapping):
    """Map from dot-separated parameter path to a float64 array.

    Shapes are fixed once a path exists: assigning an array of a different
    shape to an existing path raises ``ValueError``.
    """

    def __init__(self, items=None) -> None:
        self._data: dict[str, np.ndarray] = {}
        if items:
            for k, v in dict(items).items():
                self[k] = v

    def __getitem__(self, key: str) -> np.ndarray:
        return self._data[key]

    def __setitem__(self, key: str, value) -> None:
        arr = as_tensor(value)
        old = self._data.get(key)
        if old is not None and old.shape != arr.shape:
            raise ValueError(f"{key}: shape is fixed at {old.shape}, got {arr.shape}")
        self._data[key] = arr

    def __delitem__(self, key: str) -> None:
        del self._data[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"ParameterStore({len(self)} tensors, {self.size()} values)"

    def size(self) -> int:
        return sum(v.size for v in self._data.values())

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._data.items()})

    def with_prefix(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self._data.items() if k.startswith(prefix)}

    def save(self, directory: str | Path) -> None:
        """Write one SSTB1 file per path plus a JSON manifest of paths and shapes."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for name in sorted(self._data):
            fname = f"{name}.sstb"
            write_sstb(d / fname, self._data[name])
            entries.append({"path": name, "shape": list(self._data[name].shape), "file": fname})
        with open(d / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"format": "SSTB1", "parameters": entries}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory: str | Path) -> "ParameterStore":
        d = Path(directory)
        with open(d / MANIFEST, encoding="utf-8") as fh:
            manifest = json.load(fh)
        store = cls()
        for e in manifest["parameters"]:
            arr = read_sstb(d / e["file"])
            if list(arr.shape) != list(e["shape"]):
                raise ValueError(f"{e['path']}: file shape {arr.shape} disagrees with manifest {e['shape']}")
            store[e["path"]] = arr
        return store


def stores_equal(a: ParameterStore, b: ParameterStore) -> bool:
    """Bit-level equality of two stores (same paths, shapes and bytes)."""
    if set(a) != set(b):
        return False
    return all(a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)
