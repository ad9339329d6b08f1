"""Factor graph container and pose estimates."""

from __future__ import annotations

import math
from collections.abc import Mapping
from typing import Iterable, Iterator

import numpy as np

from . import se3
from .factors import CompiledFactors, Factor, Key
from .se3 import Pose


class Values(Mapping):
    """Immutable map ``Key -> Pose`` stored as stacked arrays."""

    def __init__(self, poses: Mapping[Key, Pose] | Iterable[tuple[Key, Pose]] | None = None):
        items = list(poses.items()) if isinstance(poses, Mapping) else list(poses or [])
        self._keys = [k for k, _ in items]
        self._index = {k: i for i, k in enumerate(self._keys)}
        if len(self._index) != len(self._keys):
            raise ValueError("duplicate keys in values")
        self._R, self._t = se3.stack(p for _, p in items)

    @classmethod
    def from_arrays(cls, keys: Iterable[Key], R: np.ndarray, t: np.ndarray) -> Values:
        obj = cls.__new__(cls)
        obj._keys = list(keys)
        obj._index = {k: i for i, k in enumerate(obj._keys)}
        obj._R = np.array(R, dtype=float).reshape(len(obj._keys), 3, 3)
        obj._t = np.array(t, dtype=float).reshape(len(obj._keys), 3)
        return obj

    def __getitem__(self, key: Key) -> Pose:
        i = self._index[key]
        return Pose(self._R[i], self._t[i])

    def __iter__(self) -> Iterator[Key]:
        return iter(self._keys)

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key) -> bool:
        return key in self._index

    def arrays(self, keys: Iterable[Key] | None = None) -> tuple[np.ndarray, np.ndarray]:
        if keys is None:
            return self._R.copy(), self._t.copy()
        idx = [self._index[k] for k in keys]
        return self._R[idx], self._t[idx]

    def updated(self, other: Mapping[Key, Pose]) -> Values:
        merged = dict(self.items())
        merged.update(other)
        return Values(merged)

    def without(self, keys: Iterable[Key]) -> Values:
        drop = set(keys)
        return Values((k, p) for k, p in self.items() if k not in drop)

    def __repr__(self):
        return f"Values({len(self)} poses)"


class FactorGraph:
    """Factors, the variables they reference, and variable -> factor adjacency.

    Factors live in slots numbered in insertion order; a slot id is never
    reused. Variables are registered when a factor referencing them is added
    and dropped only through :meth:`remove_variable`.
    """

    def __init__(self, factors: Iterable[Factor] = ()):
        self._factors: dict[int, Factor] = {}
        self._variables: dict[Key, None] = {}
        self._adjacency: dict[Key, set[int]] = {}
        self._next_slot = 0
        self.version = 0
        for f in factors:
            self.add(f)

    def add(self, factor: Factor) -> int:
        slot = self._next_slot
        self._next_slot += 1
        self._factors[slot] = factor
        for k in factor.keys:
            if k not in self._variables:
                self._variables[k] = None
                self._adjacency[k] = set()
            self._adjacency[k].add(slot)
        self.version += 1
        return slot

    def add_all(self, factors: Iterable[Factor]) -> list[int]:
        return [self.add(f) for f in factors]

    def remove_factor(self, slot: int) -> Factor:
        factor = self._factors.pop(slot)
        for k in factor.keys:
            self._adjacency[k].discard(slot)
        self.version += 1
        return factor

    def remove_variable(self, key: Key) -> list[Factor]:
        """Drop ``key`` and every incident factor; returns those factors in slot order."""
        if key not in self._variables:
            raise KeyError(f"unknown variable {key}")
        slots = sorted(self._adjacency[key])
        removed = [self.remove_factor(s) for s in slots]
        del self._variables[key]
        del self._adjacency[key]
        self.version += 1
        return removed

    @property
    def variables(self) -> list[Key]:
        return list(self._variables)

    @property
    def factors(self) -> list[Factor]:
        return list(self._factors.values())

    @property
    def slots(self) -> list[int]:
        return list(self._factors)

    def factor(self, slot: int) -> Factor:
        return self._factors[slot]

    def incident(self, key: Key) -> list[int]:
        return sorted(self._adjacency[key])

    def neighbors(self, key: Key) -> set[Key]:
        out = set()
        for s in self._adjacency[key]:
            out.update(self._factors[s].keys)
        out.discard(key)
        return out

    def __contains__(self, key) -> bool:
        return key in self._variables

    def __len__(self) -> int:
        return len(self._factors)

    def check_adjacency(self) -> bool:
        expected: dict[Key, set[int]] = {k: set() for k in self._variables}
        for s, f in self._factors.items():
            for k in f.keys:
                if k not in expected:
                    return False
                expected[k].add(s)
        return expected == self._adjacency

    def compile(self, key_index: Mapping[Key, int]) -> CompiledFactors:
        return CompiledFactors(self.factors, key_index)

    def factor_errors(self, values: Mapping[Key, Pose]) -> np.ndarray:
        keys = self.variables
        missing = [k for k in keys if k not in values]
        if missing:
            raise KeyError(f"missing values for {', '.join(map(str, missing[:5]))}")
        index = {k: i for i, k in enumerate(keys)}
        if isinstance(values, Values):
            R, t = values.arrays(keys)
        else:
            R, t = se3.stack(values[k] for k in keys)
        cost, _ = self.compile(index).evaluate(R, t)
        return cost

    def total_error(self, values: Mapping[Key, Pose]) -> float:
        return math.fsum(self.factor_errors(values))

    def connected_components(self) -> list[list[Key]]:
        parent = {k: k for k in self._variables}

        def find(k):
            while parent[k] != k:
                parent[k] = parent[parent[k]]
                k = parent[k]
            return k

        for f in self._factors.values():
            root = find(f.keys[0])
            for k in f.keys[1:]:
                other = find(k)
                if other != root:
                    parent[other] = root
        groups: dict[Key, list[Key]] = {}
        for k in self._variables:
            groups.setdefault(find(k), []).append(k)
        return list(groups.values())


def total_error(graph: FactorGraph, values: Mapping[Key, Pose]) -> float:
    return graph.total_error(values)
