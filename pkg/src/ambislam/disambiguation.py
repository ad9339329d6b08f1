"""Consensus-driven landmark re-initialization.

Every landmark keeps a cache of world-frame hypothesis poses
``x_t * z_tj^(i)``. Static landmarks make the true hypotheses pile up in one
cluster, so a RANSAC pose average over the cache exposes the dominant mode.
When that mode moves away from the pose the landmark was last initialized
with, the landmark is removed and re-added at the consensus pose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import se3
from .factors import Key, X
from .incremental import IncrementalSolver
from .max_mixture import MaxMixtureFactor, min_mutual_hypothesis_distance
from .se3 import Pose


class KarcherMeanError(RuntimeError):
    pass


@dataclass
class RansacConfig:
    subset_size: int = 1
    inlier_threshold: float = math.inf
    consensus_fraction: float = 0.5
    max_iterations: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if not 0.0 < self.consensus_fraction <= 1.0:
            raise ValueError("consensus_fraction must be in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class ReinitConfig:
    kappa: float = 0.5
    tol: float = 1e-3
    lam: float = 1.0  # meters per radian in the pose distance

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must be in (0, 1)")


@dataclass
class PoseCache:
    key: Key
    poses: list[Pose] = field(default_factory=list)
    last_init: Pose | None = None

    def __len__(self) -> int:
        return len(self.poses)

    def extend(self, poses: Sequence[Pose]) -> None:
        self.poses.extend(poses)


def karcher_mean(poses: Sequence[Pose], tol: float = 1e-9, max_iterations: int = 50) -> Pose:
    """Arithmetic mean translation, geodesic (Karcher) mean rotation."""
    poses = list(poses)
    if not poses:
        raise ValueError("karcher_mean of an empty list")
    if len(poses) == 1:
        return poses[0]
    R, t = se3.stack(poses)
    return _karcher_arrays(R, t, tol, max_iterations)


def _karcher_arrays(R, t, tol=1e-9, max_iterations=50) -> Pose:
    mean = R[0]
    for _ in range(max_iterations):
        step = se3.so3_log(mean.T @ R).mean(axis=0)
        mean = mean @ se3.so3_exp(step)
        if np.linalg.norm(step) < tol:
            break
    else:
        raise KarcherMeanError(f"rotation mean did not converge in {max_iterations} iterations")
    # re-orthonormalize accumulated products
    u, _, vt = np.linalg.svd(mean)
    return Pose(u @ vt, t.mean(axis=0))


def consensus_size(fraction: float, n: int) -> int:
    """Threshold ``s``; a consensus needs strictly more than ``s`` inliers."""
    return max(0, min(math.ceil(fraction * n - 1e-12), n - 1))


def robust_pose_average(cache: PoseCache | Sequence[Pose], cfg: RansacConfig, lam: float = 1.0,
                        rng: np.random.Generator | None = None
                        ) -> tuple[Pose, np.ndarray] | None:
    """RANSAC pose averaging; ``None`` when no consensus is reached."""
    poses = cache.poses if isinstance(cache, PoseCache) else list(cache)
    n = len(poses)
    if n == 0:
        raise ValueError("cannot average an empty pose cache")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    R, t = se3.stack(poses)
    s = consensus_size(cfg.consensus_fraction, n)
    k = min(cfg.subset_size, n)
    for _ in range(cfg.max_iterations):
        pick = rng.choice(n, size=k, replace=False)
        try:
            mean = _karcher_arrays(R[pick], t[pick]) if k > 1 else Pose(R[pick[0]], t[pick[0]])
        except KarcherMeanError:
            continue
        d = se3.distances(mean.rotation[None], mean.translation[None], R, t, lam)
        inliers = np.flatnonzero(d <= cfg.inlier_threshold)
        if len(inliers) > s:
            try:
                return _karcher_arrays(R[inliers], t[inliers]), inliers
            except KarcherMeanError:
                continue
    return None


def adaptive_thresholds(factor: MaxMixtureFactor, d: float, r: float, cfg: ReinitConfig,
                        lam: float | None = None) -> tuple[float, float]:
    """Tighten ``d`` and ``r`` toward ``kappa`` times the hypothesis separation."""
    if len(factor) < 2:
        return d, r
    lam = cfg.lam if lam is None else lam
    target = max(cfg.kappa * min_mutual_hypothesis_distance(factor, lam), cfg.tol)
    return min(d, target), min(r, target)


def pose_record(p: Pose) -> list[float]:
    from scipy.spatial.transform import Rotation

    q = Rotation.from_matrix(p.rotation).as_quat()
    return [float(v) for v in p.translation] + [float(v) for v in q]


class DynamicReinitializer:
    """Per-landmark caches, adaptive thresholds and the re-init decision."""

    def __init__(self, reinit: ReinitConfig | None = None, ransac: RansacConfig | None = None):
        self.reinit = reinit or ReinitConfig()
        self.ransac = ransac or RansacConfig()
        self.rng = np.random.default_rng(self.ransac.seed)
        self.caches: dict[Key, PoseCache] = {}
        self.d = math.inf
        self.r = math.inf
        self.actions: list[dict] = []

    @property
    def n_reinit(self) -> int:
        return sum(a["action"] == "reinit" for a in self.actions)

    def process_measurement(self, solver: IncrementalSolver, t: int, key: Key,
                            factor: MaxMixtureFactor) -> str:
        robot = X(t)
        if robot not in solver:
            raise KeyError(f"robot pose {robot} has no estimate")
        lam = self.reinit.lam
        self.d, self.r = adaptive_thresholds(factor, self.d, self.r, self.reinit, lam)
        x_hat = solver.pose(robot)
        world = [x_hat.compose(h) for h in factor.hypotheses]
        consensus = None
        if key not in solver:
            init = world[factor.best_weight_index()]
            solver.update([factor], {key: init})
            self.caches[key] = PoseCache(key, list(world), init)
            action = "init"
        else:
            cache = self.caches[key]
            cfg = RansacConfig(self.ransac.subset_size, self.r, self.ransac.consensus_fraction,
                               self.ransac.max_iterations, self.ransac.seed)
            found = robust_pose_average(cache, cfg, lam, self.rng)
            action = "append"
            if found is not None:
                consensus = found[0]
                if se3.distance(consensus, cache.last_init, lam) > self.d:
                    solver.reinitialize_landmark(key, consensus)
                    cache.last_init = consensus
                    action = "reinit"
            solver.update([factor])
            cache.extend(world)
        self.actions.append({
            "step": int(t),
            "landmark": str(key),
            "action": action,
            "consensus": None if consensus is None else pose_record(consensus),
            "d": _finite_or_none(self.d),
            "r": _finite_or_none(self.r),
        })
        return action

    def action_log(self) -> str:
        return "".join(json.dumps(a, sort_keys=True) + "\n" for a in self.actions)


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def process_measurement(state: DynamicReinitializer, solver: IncrementalSolver, t: int, key: Key,
                        factor: MaxMixtureFactor) -> str:
    return state.process_measurement(solver, t, key, factor)
