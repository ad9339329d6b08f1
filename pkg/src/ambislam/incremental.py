"""Incremental smoothing with fluid relinearization and landmark surgery.

Each variable keeps a linearization point. Linear factors are cached at those
points and only refreshed for variables whose estimate drifted more than
``beta`` (tangent norm) from their linearization point, for new factors, and
for max-mixture factors whose selected component changed. The cached system
is solved with the full sparse factorization; every ``batch_every`` updates
all variables are relinearized.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import se3
from .factors import CompiledFactors, Factor, Key, Linearization
from .graph import FactorGraph, Values
from .optimizer import (
    NonFiniteError,
    SolverConfig,
    SparsityPattern,
    gradient,
    retract_arrays,
    solve_spd,
)
from .se3 import Pose

log = logging.getLogger(__name__)

STEP_KINDS = ("plain", "reinit", "batch")


@dataclass
class IncrementalConfig:
    beta: float = 1e-3
    batch_every: int = 25  # 0 disables periodic full relinearization
    max_iterations: int = 30
    solver: SolverConfig = field(default_factory=SolverConfig)


@dataclass(frozen=True)
class UpdateResult:
    estimate: Values
    relinearized: int
    wall_time: float
    step_kind: str
    iterations: int = 0
    error: float = 0.0


class IncrementalSolver:
    """Owns the factor graph, linearization points and current estimate."""

    def __init__(self, config: IncrementalConfig | None = None):
        self.config = config or IncrementalConfig()
        self.graph = FactorGraph()
        self._keys: list[Key] = []
        self._index: dict[Key, int] = {}
        self._R = np.zeros((0, 3, 3))
        self._t = np.zeros((0, 3))
        self._R_lin = np.zeros((0, 3, 3))
        self._t_lin = np.zeros((0, 3))
        self._dirty: set[Key] = set()
        self._compiled: CompiledFactors | None = None
        self._compiled_slots = np.zeros(0, dtype=np.int64)
        self._compiled_version = -1
        self._cache: Linearization | None = None
        self._cache_valid = np.zeros(0, dtype=bool)
        self._pattern: SparsityPattern | None = None
        self._removed = False
        self._n_updates = 0
        self._converged = True
        self.last_error = 0.0

    # -- state access -------------------------------------------------------

    @property
    def keys(self) -> list[Key]:
        return list(self._keys)

    @property
    def estimate(self) -> Values:
        return Values.from_arrays(self._keys, self._R.copy(), self._t.copy())

    @property
    def linearization_point(self) -> Values:
        return Values.from_arrays(self._keys, self._R_lin.copy(), self._t_lin.copy())

    @property
    def dirty(self) -> set[Key]:
        return set(self._dirty)

    def __contains__(self, key) -> bool:
        return key in self._index

    def pose(self, key: Key) -> Pose:
        i = self._index[key]
        return Pose(self._R[i], self._t[i])

    def total_error(self) -> float:
        return self.graph.total_error(self.estimate)

    # -- mutation -------------------------------------------------------------

    def update(self, new_factors: Iterable[Factor] = (), new_values: Mapping[Key, Pose] | None = None,
               step_kind: str = "plain") -> UpdateResult:
        if step_kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {step_kind!r}")
        start = time.perf_counter()
        new_factors = list(new_factors)
        new_values = dict(new_values or {})
        dup = [k for k in new_values if k in self._index]
        if dup:
            raise KeyError(f"variable {dup[0]} already present")
        referenced = {k for f in new_factors for k in f.keys}
        for k in referenced:
            if k not in self._index and k not in new_values:
                raise ValueError(f"new factor references {k}, which has no value")
        orphans = [k for k in new_values if k not in referenced]
        if orphans:
            raise ValueError(f"new value {orphans[0]} is not connected to any factor")

        if new_values:
            keys = list(new_values)
            R, t = se3.stack(new_values[k] for k in keys)
            for k in keys:
                self._index[k] = len(self._keys)
                self._keys.append(k)
            self._R = np.concatenate([self._R, R])
            self._t = np.concatenate([self._t, t])
            self._R_lin = np.concatenate([self._R_lin, R])
            self._t_lin = np.concatenate([self._t_lin, t])
            self._dirty.update(keys)
        self.graph.add_all(new_factors)
        self._n_updates += 1
        if (step_kind == "plain" and self.config.batch_every
                and self._n_updates % self.config.batch_every == 0):
            step_kind = "batch"
        if step_kind == "batch":
            self._dirty.update(self._keys)

        if step_kind == "plain" and self._converged and self._trivial(new_factors, new_values):
            iterations, relinearized = 0, 0
        else:
            iterations, relinearized = self._solve()
        return UpdateResult(self.estimate, relinearized, time.perf_counter() - start, step_kind,
                            iterations, self.last_error)

    def remove_variable(self, key: Key) -> list[Factor]:
        """Remove a landmark and all factors attached to it."""
        if key not in self._index:
            raise KeyError(f"unknown variable {key}")
        if not key.is_landmark:
            raise ValueError(f"refusing to remove robot pose {key}; only landmarks can be removed")
        removed = self.graph.remove_variable(key)
        i = self._index.pop(key)
        del self._keys[i]
        self._index = {k: n for n, k in enumerate(self._keys)}
        self._R = np.delete(self._R, i, axis=0)
        self._t = np.delete(self._t, i, axis=0)
        self._R_lin = np.delete(self._R_lin, i, axis=0)
        self._t_lin = np.delete(self._t_lin, i, axis=0)
        self._dirty.discard(key)
        self._removed = True
        return removed

    def reinitialize_landmark(self, key: Key, new_init: Pose) -> UpdateResult:
        """Remove and re-add ``key`` with its factors, restarting it at ``new_init``."""
        if key not in self._index:
            raise KeyError(f"unknown variable {key}")
        if not key.is_landmark:
            raise ValueError(f"{key} is not a landmark")
        removed = self.remove_variable(key)
        init = self._conditional_optimum(key, removed, new_init)
        return self.update(removed, {key: init}, step_kind="reinit")

    # -- internals ------------------------------------------------------------

    def _conditional_optimum(self, key: Key, factors: list[Factor], init: Pose) -> Pose:
        """Optimize ``key`` alone over ``factors`` with every other variable held.

        Only the re-added variable's factors changed, so starting the joint
        solve from this point keeps the update local to the landmark.
        """
        index = dict(self._index)
        index[key] = len(self._keys)
        comp = CompiledFactors(factors, index)
        R = np.concatenate([self._R, init.rotation[None]])
        t = np.concatenate([self._t, init.translation[None]])
        me = index[key]
        scfg = self.config.solver
        err = float(np.sum(comp.evaluate(R, t)[0]))
        lam = scfg.initial_lambda
        for _ in range(scfg.max_iterations):
            lin = comp.linearize(R, t)
            J = np.where((lin.ib == me)[:, None, None], lin.JB, 0.0) \
                + np.where((lin.ia == me)[:, None, None], lin.JA, 0.0)
            H = np.einsum("nki,nkj->ij", J, J)
            g = np.einsum("nki,nk->i", J, lin.e)
            while True:
                step = np.linalg.solve(H + lam * np.eye(6), -g)
                dR, dt = se3.se3_exp(step[None])
                R_new, t_new = R.copy(), t.copy()
                R_new[me] = R[me] @ dR[0]
                t_new[me] = t[me] + R[me] @ dt[0]
                err_new = float(np.sum(comp.evaluate(R_new, t_new)[0]))
                if err_new <= err:
                    break
                lam *= scfg.lambda_factor
                if lam > scfg.max_lambda:
                    return Pose(R[me], t[me])
            decrease = err - err_new
            R, t, err = R_new, t_new, err_new
            lam = max(lam / scfg.lambda_factor, 1e-12)
            if err <= scfg.atol or decrease <= scfg.rtol * (err + decrease):
                break
        return Pose(R[me], t[me])

    def _trivial(self, new_factors, new_values) -> bool:
        """New factors with zero residual leave a converged optimum unchanged."""
        if any(k not in new_values for k in self._dirty):
            return False
        if not new_factors:
            return True
        comp = CompiledFactors(new_factors, self._index)
        cost, _ = comp.evaluate(self._R, self._t)
        return bool(np.max(cost) <= 1e-18)

    def _compile(self) -> CompiledFactors:
        if self._compiled is not None and self._compiled_version == self.graph.version:
            return self._compiled
        slots = np.asarray(self.graph.slots, dtype=np.int64)
        old = self._compiled_slots
        if (self._compiled is not None and not self._removed and len(slots) >= len(old)
                and np.array_equal(slots[:len(old)], old)):
            compiled = self._compiled.extended([self.graph.factor(s) for s in slots[len(old):]],
                                               self._index)
        else:
            compiled = self.graph.compile(self._index)
        self._removed = False
        F = len(slots)
        JA = np.zeros((F, 6, 6))
        JB = np.zeros((F, 6, 6))
        e = np.zeros((F, 6))
        sel = np.zeros(F, dtype=np.int64)
        valid = np.zeros(F, dtype=bool)
        if self._cache is not None and len(self._compiled_slots):
            pos = np.searchsorted(self._compiled_slots, slots)
            pos = np.minimum(pos, len(self._compiled_slots) - 1)
            hit = (self._compiled_slots[pos] == slots) & self._cache_valid[pos]
            src = pos[hit]
            JA[hit] = self._cache.JA[src]
            JB[hit] = self._cache.JB[src]
            e[hit] = self._cache.e[src]
            sel[hit] = self._cache.selected[src]
            valid = hit
        heads = compiled.row_start[:F]
        self._cache = Linearization(compiled.ia[heads], compiled.ib[heads], JA, JB, e, sel)
        self._cache_valid = valid
        self._compiled = compiled
        self._compiled_slots = slots
        self._compiled_version = self.graph.version
        self._pattern = SparsityPattern(len(self._keys), self._cache.ia, self._cache.ib)
        return compiled

    def _evaluate(self, compiled, R, t):
        cost, sel = compiled.evaluate(R, t)
        err = float(np.sum(cost))
        if not np.isfinite(err):
            raise NonFiniteError("total error became non-finite")
        return err, sel

    def _offsets(self) -> np.ndarray:
        """Tangent offset of each estimate from its linearization point."""
        Rl_t = np.swapaxes(self._R_lin, 1, 2)
        dR = Rl_t @ self._R
        dt = np.einsum("nij,nj->ni", Rl_t, self._t - self._t_lin)
        return se3.se3_log(dR, dt)

    def _solve(self) -> tuple[int, int]:
        cfg = self.config
        scfg = cfg.solver
        compiled = self._compile()
        n = len(self._keys)
        # rebuild indices: variable removal shifts columns
        heads = compiled.row_start[:compiled.n_factors]
        self._cache = self._cache._replace(ia=compiled.ia[heads], ib=compiled.ib[heads])
        err, sel_est = self._evaluate(compiled, self._R, self._t)
        relinearized: set[Key] = set()
        lam = scfg.initial_lambda
        iterations = 0
        self._converged = False
        for it in range(cfg.max_iterations):
            iterations = it + 1
            offsets = self._offsets()
            moved = np.flatnonzero(np.linalg.norm(offsets, axis=1) > cfg.beta)
            dirty_idx = np.union1d(moved, [self._index[k] for k in self._dirty]).astype(np.int64)
            if len(dirty_idx):
                self._R_lin[dirty_idx] = self._R[dirty_idx]
                self._t_lin[dirty_idx] = self._t[dirty_idx]
                offsets[dirty_idx] = 0.0
                relinearized.update(self._keys[i] for i in dirty_idx)
                self._dirty.clear()
            ia, ib = self._cache.ia, self._cache.ib
            stale = ~self._cache_valid | (self._cache.selected != sel_est)
            if len(dirty_idx):
                stale |= np.isin(ia, dirty_idx) | np.isin(ib, dirty_idx)
            stale_idx = np.flatnonzero(stale)
            if len(stale_idx):
                lin = compiled.linearize(self._R_lin, self._t_lin, stale_idx, sel_est[stale_idx])
                self._cache.JA[stale_idx] = lin.JA
                self._cache.JB[stale_idx] = lin.JB
                self._cache.e[stale_idx] = lin.e
                self._cache.selected[stale_idx] = lin.selected
                self._cache_valid[stale_idx] = True

            hv = self._pattern.values(self._cache)
            base = offsets.ravel()
            g = gradient(n, self._cache) + self._pattern.matrix(hv) @ base
            while True:
                A = self._pattern.matrix(hv, lam if scfg.method == "lm" else 0.0)
                step = solve_spd(A, -g)
                R_new, t_new = retract_arrays(self._R_lin, self._t_lin, base + step)
                err_new, sel_new = self._evaluate(compiled, R_new, t_new)
                if scfg.method == "gn" or err_new <= err:
                    break
                lam *= scfg.lambda_factor
                # an increase within tolerance means we are at the optimum already
                if lam > scfg.max_lambda or err_new - err <= scfg.rtol * err:
                    self._converged = True
                    self.last_error = err
                    return iterations, len(relinearized)
            self._R, self._t = R_new, t_new
            decrease = err - err_new
            err, sel_est = err_new, sel_new
            if scfg.method == "lm":
                lam = max(lam / scfg.lambda_factor, 1e-12)
            if err <= scfg.atol or abs(decrease) <= scfg.rtol * max(err + decrease, 1e-300):
                self._converged = True
                break
        self.last_error = err
        return iterations, len(relinearized)
