"""Named parameter storage and the binary checkpoint format.

Checkpoint layout: one line of JSON (names, shapes, trainable flags, seed)
terminated by a newline, followed by every tensor's values as little-endian
float64 in header order, row-major.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = "dualadapt-ckpt-v1"


class FreezePolicyError(RuntimeError):
    """Raised when a parameter's trainable flag violates the freeze contract."""


class ParamStore:
    """Name -> Tensor map with a trainable flag per entry.

    Iteration is sorted by name. Once :meth:`lock` is called the trainable
    flags can no longer change.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}
        self._locked = False

    def add(self, name: str, value: np.ndarray, trainable: bool) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        if self._locked:
            raise FreezePolicyError("cannot add parameters after the store is locked")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=trainable)
        self._tensors[name] = t
        self._trainable[name] = bool(trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._tensors[name]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        if self._locked:
            raise FreezePolicyError(f"trainable flag of {name!r} is immutable after assembly")
        self._trainable[name] = bool(flag)
        self._tensors[name].requires_grad = bool(flag)

    def lock(self) -> None:
        self._locked = True

    @property
    def locked(self) -> bool:
        return self._locked

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.items() if self._trainable[n]]

    def frozen(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.items() if not self._trainable[n]]

    def count(self, trainable: bool | None = None) -> int:
        return sum(t.size for n, t in self.items()
                   if trainable is None or self._trainable[n] == trainable)

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def checksum(self, trainable: bool | None = False) -> str:
        """sha256 over names and raw bytes; defaults to the frozen subset."""
        h = hashlib.sha256()
        for name, t in self.items():
            if trainable is not None and self._trainable[name] != trainable:
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self._tensors.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    # checkpoint IO

    def save(self, path: str | Path) -> None:
        header = {
            "format": CHECKPOINT_MAGIC,
            "seed": self.seed,
            "params": [
                {"name": n, "shape": list(t.shape), "trainable": self._trainable[n]}
                for n, t in self.items()
            ],
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            for _, t in self.items():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        header, arrays = read_checkpoint(path)
        store = cls(seed=header["seed"])
        for entry in header["params"]:
            store.add(entry["name"], arrays[entry["name"]], entry["trainable"])
        return store


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    header = json.loads(raw[:cut].decode())
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    body = raw[cut + 1:]
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if offset + nbytes > len(body):
            raise ValueError(f"{path}: truncated at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise ValueError(f"{path}: {len(body) - offset} trailing bytes")
    return header, arrays
