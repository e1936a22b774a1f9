"""Named parameter registry split into shared and per-language private groups."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autodiff import Tensor

SHARED = "shared"


def private_group(lang: str) -> str:
    return f"private:{lang}"


def group_language(group: str) -> str | None:
    return group.split(":", 1)[1] if group.startswith("private:") else None


@dataclass
class Param:
    tensor: Tensor
    group: str
    tunable: bool


class ParamStore:
    """Ordered map ``name -> Param``. Insertion order is the canonical order."""

    def __init__(self, config=None):
        self.config = config
        self._params: dict[str, Param] = {}

    def register(self, name: str, array, group: str = SHARED, tunable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = array if isinstance(array, Tensor) else Tensor(array, dtype=np.asarray(array).dtype)
        t.name = name
        self._params[name] = Param(t, group, tunable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def param(self, name: str) -> Param:
        return self._params[name]

    def items(self):
        return self._params.items()

    def names(self, group: str | None = None) -> list[str]:
        return [n for n, p in self._params.items() if group is None or p.group == group]

    def groups(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self._params.values():
            seen.setdefault(p.group, None)
        return list(seen)

    def languages(self) -> list[str]:
        return [g.split(":", 1)[1] for g in self.groups() if g.startswith("private:")]

    def total_params(self, group: str | None = None) -> int:
        return sum(p.tensor.size for p in self._params.values() if group is None or p.group == group)

    def set_tunable(self, group: str, flag: bool) -> None:
        for p in self._params.values():
            if p.group == group:
                p.tunable = flag

    def tunable_names(self) -> list[str]:
        return [n for n, p in self._params.items() if p.tunable]

    def copy(self) -> "ParamStore":
        out = ParamStore(self.config)
        for n, p in self._params.items():
            out.register(n, Tensor(p.tensor.data.copy(), dtype=p.tensor.data.dtype), p.group, p.tunable)
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(self.config)
        for n, p in self._params.items():
            out.register(n, Tensor(p.tensor.data.astype(dtype), dtype=dtype), p.group, p.tunable)
        return out

    def subset(self, group: str) -> "ParamStore":
        out = ParamStore(self.config)
        for n in self.names(group):
            p = self._params[n]
            out.register(n, Tensor(p.tensor.data.copy(), dtype=p.tensor.data.dtype), p.group, p.tunable)
        return out

    def merge(self, other: "ParamStore", overwrite: bool = False) -> None:
        for n, p in other.items():
            if n in self._params:
                if not overwrite:
                    raise KeyError(f"parameter {n!r} already registered")
                self._params[n].tensor.data[...] = p.tensor.data
            else:
                self.register(n, Tensor(p.tensor.data.copy(), dtype=p.tensor.data.dtype), p.group, p.tunable)

    def hash_param(self, name: str) -> str:
        return hashlib.sha256(self._params[name].tensor.data.tobytes()).hexdigest()

    def hash_group(self, group: str) -> str:
        h = hashlib.sha256()
        for n in self.names(group):
            h.update(n.encode())
            h.update(self._params[n].tensor.data.tobytes())
        return h.hexdigest()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.grad = None

    def snapshot(self, names=None) -> dict[str, np.ndarray]:
        names = self._params if names is None else names
        return {n: self._params[n].tensor.data.copy() for n in names}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self._params[n].tensor.data[...] = arr
