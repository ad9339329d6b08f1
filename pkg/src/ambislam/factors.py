"""Variable keys, Gaussian noise models and pose factors.

Every factor is expressed as one or more *components*: a measured relative
pose, a noise model and an additive constant. A component's residual is

    r = log(measured^-1 * predicted),   predicted = between(x_a, x_b)

(for a prior, ``x_a`` is the identity). Unimodal factors have exactly one
component with constant 0; a max-mixture factor keeps the component with the
lowest ``0.5 * |L r|^2 + constant``. :class:`CompiledFactors` evaluates and
linearizes any list of factors in one vectorized pass.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import se3
from .se3 import Pose

_LOG_2PI = math.log(2.0 * math.pi)


class Key(NamedTuple):
    kind: str  # "x" robot, "l" landmark
    index: int

    def __str__(self) -> str:
        return f"{self.kind}{self.index}"

    @property
    def is_landmark(self) -> bool:
        return self.kind == "l"

    @classmethod
    def parse(cls, text: str) -> Key:
        text = text.strip()
        if len(text) < 2 or text[0] not in "xl" or not text[1:].isdigit():
            raise ValueError(f"bad variable key {text!r}")
        return cls(text[0], int(text[1:]))


def X(i: int) -> Key:
    return Key("x", int(i))


def L(j: int) -> Key:
    return Key("l", int(j))


class GaussianNoiseModel:
    """Zero-mean Gaussian over twist coordinates (rotation first)."""

    __slots__ = ("covariance", "sqrt_information", "log_det_2pi_cov")

    def __init__(self, covariance):
        cov = np.array(covariance, dtype=float).reshape(6, 6)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0.0):
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        info = np.linalg.inv(cov)
        info = 0.5 * (info + info.T)
        self.covariance = cov
        # upper-triangular U with U^T U = information
        self.sqrt_information = np.linalg.cholesky(info).T
        self.log_det_2pi_cov = 6.0 * _LOG_2PI + 2.0 * float(np.sum(np.log(np.diag(chol))))

    @classmethod
    def from_sigmas(cls, sigmas) -> GaussianNoiseModel:
        return cls(np.diag(np.asarray(sigmas, dtype=float) ** 2))

    @classmethod
    def from_information(cls, info) -> GaussianNoiseModel:
        return cls(np.linalg.inv(np.asarray(info, dtype=float)))

    @property
    def information(self) -> np.ndarray:
        return self.sqrt_information.T @ self.sqrt_information

    def whiten(self, r) -> np.ndarray:
        return self.sqrt_information @ np.asarray(r, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, GaussianNoiseModel):
            return NotImplemented
        return np.array_equal(self.covariance, other.covariance)

    def __repr__(self):
        return f"GaussianNoiseModel(diag={np.round(np.diag(self.covariance), 6).tolist()})"


def as_noise(noise) -> GaussianNoiseModel:
    if isinstance(noise, GaussianNoiseModel):
        return noise
    return GaussianNoiseModel(noise)


class Factor:
    """Base class. Subclasses define ``keys`` and :meth:`components`."""

    keys: tuple[Key, ...]

    def components(self) -> list[tuple[Pose, GaussianNoiseModel, float]]:
        raise NotImplementedError

    def _compile(self, values) -> tuple[CompiledFactors, np.ndarray, np.ndarray]:
        missing = [k for k in self.keys if k not in values]
        if missing:
            raise KeyError(f"missing value for {', '.join(map(str, missing))}")
        index = {k: i for i, k in enumerate(self.keys)}
        R, t = se3.stack(values[k] for k in self.keys)
        return CompiledFactors([self], index), R, t

    def error(self, values: Mapping[Key, Pose]) -> float:
        comp, R, t = self._compile(values)
        cost, _ = comp.evaluate(R, t)
        return float(cost[0])

    def linearize(self, values: Mapping[Key, Pose]) -> tuple[dict[Key, np.ndarray], np.ndarray]:
        """Whitened Jacobian blocks per key and the whitened residual."""
        comp, R, t = self._compile(values)
        lin = comp.linearize(R, t)
        blocks = {self.keys[-1]: lin.JB[0]}
        if len(self.keys) == 2:
            blocks[self.keys[0]] = lin.JA[0]
        return blocks, lin.e[0]


class PriorFactor(Factor):
    def __init__(self, key: Key, measured: Pose, noise):
        self.key = key
        self.keys = (key,)
        self.measured = measured
        self.noise = as_noise(noise)

    def components(self):
        return [(self.measured, self.noise, 0.0)]

    def __repr__(self):
        return f"PriorFactor({self.key}, {self.measured!r})"


class BetweenFactor(Factor):
    def __init__(self, key_a: Key, key_b: Key, measured: Pose, noise):
        if key_a == key_b:
            raise ValueError("between factor needs two distinct keys")
        self.key_a = key_a
        self.key_b = key_b
        self.keys = (key_a, key_b)
        self.measured = measured
        self.noise = as_noise(noise)

    def components(self):
        return [(self.measured, self.noise, 0.0)]

    def __repr__(self):
        return f"BetweenFactor({self.key_a}, {self.key_b}, {self.measured!r})"


class Linearization(NamedTuple):
    """Whitened linear factors, one row per factor (selected component)."""

    ia: np.ndarray  # (F,) column block of the first key, -1 for priors
    ib: np.ndarray  # (F,)
    JA: np.ndarray  # (F, 6, 6)
    JB: np.ndarray  # (F, 6, 6)
    e: np.ndarray  # (F, 6)
    selected: np.ndarray  # (F,) component index within each factor


class CompiledFactors:
    """Stacked component arrays for a fixed factor list and variable order."""

    def __init__(self, factors: Sequence[Factor], key_index: Mapping[Key, int]):
        self.factors = list(factors)
        ia, ib, ZR, Zt, Lw, const, counts = [], [], [], [], [], [], []
        for f in self.factors:
            a = key_index[f.keys[0]] if len(f.keys) == 2 else -1
            b = key_index[f.keys[-1]]
            comps = f.components()
            counts.append(len(comps))
            for measured, noise, c in comps:
                ia.append(a)
                ib.append(b)
                ZR.append(measured.rotation)
                Zt.append(measured.translation)
                Lw.append(noise.sqrt_information)
                const.append(c)
        m = len(ia)
        self.n_factors = len(self.factors)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.row_start = np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(np.int64)
        self.row_factor = np.repeat(np.arange(self.n_factors), self.counts)
        self.ia = np.asarray(ia, dtype=np.int64)
        self.ib = np.asarray(ib, dtype=np.int64)
        self.ZR = np.asarray(ZR).reshape(m, 3, 3)
        self.Zt = np.asarray(Zt).reshape(m, 3)
        self.L = np.asarray(Lw).reshape(m, 6, 6)
        self.const = np.asarray(const, dtype=float)
        self.multimodal = bool(np.any(self.counts > 1))

    def extended(self, factors: Sequence[Factor], key_index: Mapping[Key, int]) -> CompiledFactors:
        """A new compiled list with ``factors`` appended (same variable order)."""
        tail = CompiledFactors(factors, key_index)
        out = CompiledFactors.__new__(CompiledFactors)
        out.factors = self.factors + tail.factors
        out.n_factors = self.n_factors + tail.n_factors
        out.counts = np.concatenate([self.counts, tail.counts])
        out.row_start = np.concatenate([self.row_start, tail.row_start + len(self.ia)])
        out.row_factor = np.concatenate([self.row_factor, tail.row_factor + self.n_factors])
        for name in ("ia", "ib", "ZR", "Zt", "L", "const"):
            setattr(out, name, np.concatenate([getattr(self, name), getattr(tail, name)]))
        out.multimodal = self.multimodal or tail.multimodal
        return out

    def _relative(self, R, t, rows):
        ia, ib = self.ia[rows], self.ib[rows]
        prior = ia < 0
        RA = np.where(prior[:, None, None], np.eye(3), R[np.maximum(ia, 0)])
        tA = np.where(prior[:, None], 0.0, t[np.maximum(ia, 0)])
        RAt = np.swapaxes(RA, 1, 2)
        PR = RAt @ R[ib]
        Pt = np.einsum("nij,nj->ni", RAt, t[ib] - tA)
        ZRt = np.swapaxes(self.ZR[rows], 1, 2)
        ER = ZRt @ PR
        Et = np.einsum("nij,nj->ni", ZRt, Pt - self.Zt[rows])
        return se3.se3_log(ER, Et), PR, Pt

    def component_costs(self, R: np.ndarray, t: np.ndarray) -> np.ndarray:
        """``0.5 |L r|^2 + constant`` for every component row."""
        rows = np.arange(len(self.ia))
        r, _, _ = self._relative(R, t, rows)
        e = np.einsum("nij,nj->ni", self.L, r)
        return 0.5 * np.einsum("ni,ni->n", e, e) + self.const

    def evaluate(self, R: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-factor error and selected component (lowest index on ties)."""
        if self.n_factors == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        costs = self.component_costs(R, t)
        if not self.multimodal:
            return costs, np.zeros(self.n_factors, dtype=np.int64)
        fmin = np.minimum.reduceat(costs, self.row_start)
        hit = np.flatnonzero(costs == fmin[self.row_factor])
        _, first = np.unique(self.row_factor[hit], return_index=True)
        selected = hit[first] - self.row_start
        return fmin, selected

    def rows_of(self, factor_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Component rows of the given factors and their position in ``factor_idx``."""
        counts = self.counts[factor_idx]
        owner = np.repeat(np.arange(len(factor_idx)), counts)
        offsets = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
        return np.repeat(self.row_start[factor_idx], counts) + offsets, owner

    def select(self, R, t, factor_idx) -> np.ndarray:
        """Selected component of each factor in ``factor_idx``."""
        factor_idx = np.asarray(factor_idx, dtype=np.int64)
        if not self.multimodal or len(factor_idx) == 0:
            return np.zeros(len(factor_idx), dtype=np.int64)
        rows, owner = self.rows_of(factor_idx)
        r, _, _ = self._relative(R, t, rows)
        e = np.einsum("nij,nj->ni", self.L[rows], r)
        costs = 0.5 * np.einsum("ni,ni->n", e, e) + self.const[rows]
        starts = np.concatenate([[0], np.cumsum(self.counts[factor_idx])[:-1]]).astype(np.int64)
        fmin = np.minimum.reduceat(costs, starts)
        hit = np.flatnonzero(costs == fmin[owner])
        _, first = np.unique(owner[hit], return_index=True)
        return hit[first] - starts

    def linearize(self, R, t, factor_idx=None, selected=None) -> Linearization:
        """Whitened Jacobians of the selected components.

        ``selected`` (per factor) bypasses the max-selection; otherwise the
        selection is re-evaluated at ``(R, t)``.
        """
        if factor_idx is None:
            factor_idx = np.arange(self.n_factors)
        factor_idx = np.asarray(factor_idx, dtype=np.int64)
        if selected is None:
            selected = self.select(R, t, factor_idx)
        rows = self.row_start[factor_idx] + selected
        r, PR, Pt = self._relative(R, t, rows)
        Lw = self.L[rows]
        Jinv = se3.se3_right_jacobian_inv(r)
        # d r / d x_a = -Jr^-1(r) Ad(P^-1), P = x_a^-1 x_b
        PRt = np.swapaxes(PR, 1, 2)
        adj = se3.se3_adjoint(PRt, -np.einsum("nij,nj->ni", PRt, Pt))
        JB = Lw @ Jinv
        JA = -(JB @ adj)
        e = np.einsum("nij,nj->ni", Lw, r)
        return Linearization(self.ia[rows], self.ib[rows], JA, JB, e, np.asarray(selected))


def total_error_of(factors: Iterable[Factor], values) -> float:
    factors = list(factors)
    keys = list(dict.fromkeys(k for f in factors for k in f.keys))
    index = {k: i for i, k in enumerate(keys)}
    R, t = se3.stack(values[k] for k in keys)
    cost, _ = CompiledFactors(factors, index).evaluate(R, t)
    return math.fsum(cost)
