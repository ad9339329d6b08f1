"""Sparse Gauss-Newton / Levenberg-Marquardt batch optimization.

Variables are updated on the right, ``x <- x * exp(delta)``, consistently with
the factor Jacobians.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import se3
from .factors import Key, Linearization, PriorFactor
from .graph import FactorGraph, Values

log = logging.getLogger(__name__)

_BLOCK = np.arange(6)


class UnderconstrainedError(RuntimeError):
    """The normal equations are rank deficient (a component lacks a prior)."""

    def __init__(self, message: str, component: list[Key] | None = None):
        super().__init__(message)
        self.component = component or []


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class SolverConfig:
    method: str = "lm"  # "lm" or "gn"
    rtol: float = 1e-8
    atol: float = 1e-10
    max_iterations: int = 100
    initial_lambda: float = 1e-5
    lambda_factor: float = 10.0
    max_lambda: float = 1e10

    def __post_init__(self):
        if self.method not in ("lm", "gn"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass
class OptimizeStats:
    iterations: int = 0
    errors: list[float] = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    @property
    def initial_error(self) -> float:
        return self.errors[0]

    @property
    def final_error(self) -> float:
        return self.errors[-1]


class SparsityPattern:
    """CSC structure of ``J^T J`` for fixed factor connectivity.

    Built once per factor list; assembling values then reduces to a segment
    sum over 6x6 blocks and a gather into the CSC data array.
    """

    def __init__(self, n: int, ia: np.ndarray, ib: np.ndarray):
        self.n = n
        binary = ia >= 0
        iab, ibb = ia[binary], ib[binary]
        bi = np.concatenate([ib, iab, iab, ibb])
        bj = np.concatenate([ib, iab, ibb, iab])
        self.binary = binary
        block_key = bi.astype(np.int64) * n + bj
        self.order = np.argsort(block_key, kind="stable")
        ukeys, self.starts = np.unique(block_key[self.order], return_index=True)
        ur, uc = ukeys // n, ukeys % n
        # mark each scalar entry with its position in the flattened block array
        marker = np.arange(1, len(ukeys) * 36 + 1, dtype=float).reshape(-1, 6, 6)
        rows = (6 * ur[:, None, None] + _BLOCK[None, :, None]).repeat(6, axis=2).ravel()
        cols = (6 * uc[:, None, None] + _BLOCK[None, None, :]).repeat(6, axis=1).ravel()
        tmpl = sp.csc_matrix((marker.ravel(), (rows, cols)), shape=(6 * n, 6 * n))
        tmpl.sort_indices()
        self.indptr = tmpl.indptr
        self.indices = tmpl.indices
        self.perm = tmpl.data.astype(np.int64) - 1
        diag = np.flatnonzero(self.indices == np.repeat(np.arange(6 * n), np.diff(self.indptr)))
        self.diag = diag

    def assemble(self, lin: Linearization, damping: float = 0.0) -> sp.csc_matrix:
        return self.matrix(self.values(lin), damping)

    def matrix(self, values: np.ndarray, damping: float = 0.0) -> sp.csc_matrix:
        data = values.copy()
        if damping:
            data[self.diag] += damping
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(6 * self.n, 6 * self.n))

    def values(self, lin: Linearization) -> np.ndarray:
        """CSC data array of the undamped ``J^T J``."""
        JA, JB = lin.JA, lin.JB
        JAb, JBb = JA[self.binary], JB[self.binary]
        JBt = np.swapaxes(JB, 1, 2)
        JAbt = np.swapaxes(JAb, 1, 2)
        blocks = np.concatenate([JBt @ JB, JAbt @ JAb, JAbt @ JBb, np.swapaxes(JBb, 1, 2) @ JAb])
        summed = np.add.reduceat(blocks[self.order], self.starts, axis=0)
        return summed.ravel()[self.perm]


def gradient(n: int, lin: Linearization) -> np.ndarray:
    ia, ib, JA, JB, e = lin.ia, lin.ib, lin.JA, lin.JB, lin.e
    binary = ia >= 0
    g = np.zeros((n, 6))
    np.add.at(g, ib, np.einsum("nji,nj->ni", JB, e))
    np.add.at(g, ia[binary], np.einsum("nji,nj->ni", JA[binary], e[binary]))
    return g.ravel()


def normal_equations(n: int, lin: Linearization, pattern: SparsityPattern | None = None
                     ) -> tuple[sp.csc_matrix, np.ndarray]:
    """Assemble ``H = J^T J`` and ``g = J^T e`` for ``n`` pose variables."""
    pattern = pattern or SparsityPattern(n, lin.ia, lin.ib)
    return pattern.assemble(lin), gradient(n, lin)


def solve_spd(H: sp.csc_matrix, rhs: np.ndarray) -> np.ndarray:
    try:
        lu = spla.splu(H, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise UnderconstrainedError(f"singular normal equations: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise UnderconstrainedError("normal equations produced a non-finite step")
    return x


def retract_arrays(R: np.ndarray, t: np.ndarray, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dR, dt = se3.se3_exp(delta.reshape(-1, 6))
    return R @ dR, t + np.einsum("nij,nj->ni", R, dt)


def check_gauge(graph: FactorGraph) -> None:
    anchored = set()
    for f in graph.factors:
        if isinstance(f, PriorFactor):
            anchored.add(f.key)
    for comp in graph.connected_components():
        if not anchored.intersection(comp):
            raise UnderconstrainedError(
                f"component of {len(comp)} variables has no prior: "
                + ", ".join(map(str, comp[:8])) + (" ..." if len(comp) > 8 else ""),
                comp,
            )


def optimize_batch(graph: FactorGraph, initial, config: SolverConfig | None = None
                   ) -> tuple[Values, OptimizeStats]:
    """Minimize the total error of ``graph`` starting from ``initial``."""
    config = config or SolverConfig()
    keys = graph.variables
    missing = [k for k in keys if k not in initial]
    if missing:
        raise KeyError(f"initial values missing {', '.join(map(str, missing[:5]))}")
    check_gauge(graph)
    index = {k: i for i, k in enumerate(keys)}
    if isinstance(initial, Values):
        R, t = initial.arrays(keys)
    else:
        R, t = se3.stack(initial[k] for k in keys)
    compiled = graph.compile(index)
    R, t, stats = levenberg_marquardt(compiled, R, t, config)
    return Values.from_arrays(keys, R, t), stats


def levenberg_marquardt(compiled, R, t, config: SolverConfig):
    n = R.shape[0]
    stats = OptimizeStats()

    def total(R_, t_):
        cost, _ = compiled.evaluate(R_, t_)
        err = float(np.sum(cost))
        if not math.isfinite(err):
            raise NonFiniteError("total error became non-finite")
        return err

    err = total(R, t)
    stats.errors.append(err)
    if compiled.n_factors == 0 or err <= config.atol:
        stats.converged, stats.reason = True, "atol"
        return R, t, stats
    lam = config.initial_lambda
    pattern = SparsityPattern(n, compiled.ia[compiled.row_start], compiled.ib[compiled.row_start])
    for it in range(config.max_iterations):
        lin = compiled.linearize(R, t)
        g = gradient(n, lin)
        hv = pattern.values(lin)
        while True:
            A = pattern.matrix(hv, lam if config.method == "lm" else 0.0)
            delta = solve_spd(A, -g)
            R_new, t_new = retract_arrays(R, t, delta)
            err_new = total(R_new, t_new)
            if config.method == "gn" or err_new <= err:
                break
            lam *= config.lambda_factor
            if lam > config.max_lambda or err_new - err <= config.rtol * err:
                stats.iterations = it + 1
                stats.converged, stats.reason = True, "no_decrease"
                return R, t, stats
        stats.iterations = it + 1
        decrease = err - err_new
        R, t = R_new, t_new
        stats.errors.append(err_new)
        if config.method == "lm":
            lam = max(lam / config.lambda_factor, 1e-12)
        if err_new <= config.atol:
            stats.converged, stats.reason = True, "atol"
            break
        if abs(decrease) <= config.rtol * err:
            stats.converged, stats.reason = True, "rtol"
            break
        err = err_new
    else:
        stats.reason = "max_iterations"
    return R, t, stats
