"""Replay a measurement log through one of the SLAM front ends.

``sh``
    Single hypothesis: each detection contributes one plain between factor
    (highest weight, or a seeded random pick).
``mm``
    Max-mixture factors, new landmarks start at the first hypothesis.
``mm_reinit``
    Max-mixture factors plus consensus-driven landmark re-initialization.

All methods share the same odometry handling, association and update
granularity, so they differ only in how detections enter the graph.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .association import AssociationConfig, associate
from .disambiguation import DynamicReinitializer, RansacConfig, ReinitConfig
from .factors import BetweenFactor, GaussianNoiseModel, Key, L, PriorFactor, X
from .graph import Values
from .incremental import IncrementalConfig, IncrementalSolver
from .max_mixture import MaxMixtureFactor
from .simulator import GroundTruth, LandmarkRecord, MeasurementLog

METHODS = ("sh", "mm", "mm_reinit")


def canonical_method(name: str) -> str:
    m = name.lower().replace("-", "_")
    if m not in METHODS:
        raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    return m


@dataclass
class PipelineConfig:
    method: str = "mm_reinit"
    sh_choice: str = "best"  # or "random"
    sh_seed: int = 0
    association: AssociationConfig = field(default_factory=AssociationConfig)
    incremental: IncrementalConfig = field(default_factory=IncrementalConfig)
    reinit: ReinitConfig = field(default_factory=ReinitConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        self.method = canonical_method(self.method)
        if self.sh_choice not in ("best", "random"):
            raise ValueError(f"unknown sh_choice {self.sh_choice!r}")


@dataclass
class RunResult:
    method: str
    estimate: Values
    classes: dict[Key, str]
    actions: list[dict]
    wall_time: float
    checksum: str
    series: list[float] = field(default_factory=list)

    @property
    def n_reinit(self) -> int:
        return sum(a["action"] == "reinit" for a in self.actions)


def log_checksum(log: MeasurementLog) -> str:
    """Digest of every number a front end can read from the log."""
    h = hashlib.sha256()

    def put(*arrays):
        for a in arrays:
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())

    put([log.n_steps], log.prior.matrix(), log.prior_covariance)
    for r in log.odometry:
        put([r.step], r.measured.matrix(), r.covariance)
    for r in log.landmarks:
        h.update(r.label.encode())
        put([r.step, r.landmark], r.weights, r.covariance, *(p.matrix() for p in r.hypotheses))
    return h.hexdigest()


def _robot_mte(solver: IncrementalSolver, truth: GroundTruth, t: int) -> float:
    est = np.stack([solver.pose(X(i)).translation for i in range(t + 1)])
    gt = np.stack([truth.trajectory[i].translation for i in range(t + 1)])
    return float(np.mean(np.linalg.norm(est - gt, axis=1)))


class _Frontend:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.solver = IncrementalSolver(cfg.incremental)
        self.reinit = DynamicReinitializer(cfg.reinit, cfg.ransac) if cfg.method == "mm_reinit" else None
        self.rng = np.random.default_rng(cfg.sh_seed)
        self.classes: dict[Key, str] = {}
        self.actions: list[dict] = []
        self._next_id = 0
        self._noise: dict[bytes, GaussianNoiseModel] = {}

    def noise(self, cov: np.ndarray) -> GaussianNoiseModel:
        k = np.asarray(cov, dtype=float).tobytes()
        if k not in self._noise:
            self._noise[k] = GaussianNoiseModel(cov)
        return self._noise[k]

    def landmark_key(self, t: int, rec: LandmarkRecord) -> Key:
        acfg = self.cfg.association
        if acfg.mode == "oracle":
            return associate(rec, None, {}, {}, acfg)
        mapped = {k: self.solver.pose(k) for k in self.classes}
        key = associate(rec, self.solver.pose(X(t)), mapped, self.classes, acfg)
        if key is None:
            while L(self._next_id) in self.classes:
                self._next_id += 1
            key = L(self._next_id)
        return key

    def detection(self, t: int, rec: LandmarkRecord) -> None:
        key = self.landmark_key(t, rec)
        robot = X(t)
        noise = self.noise(rec.covariance)
        new = key not in self.solver
        if new:
            self.classes[key] = rec.label
        method = self.cfg.method
        if method == "sh":
            if self.cfg.sh_choice == "random":
                i = int(self.rng.integers(len(rec.hypotheses)))
            else:
                i = int(np.argmax(rec.weights))
            z = rec.hypotheses[i]
            factor = BetweenFactor(robot, key, z, noise)
            init = {key: self.solver.pose(robot).compose(z)} if new else {}
            self.solver.update([factor], init)
            self._log(t, key, "init" if new else "append")
            return
        factor = MaxMixtureFactor.from_hypotheses(robot, key, rec.hypotheses, noise, rec.weights)
        if self.reinit is not None:
            self.reinit.process_measurement(self.solver, t, key, factor)
            self.actions.append(self.reinit.actions[-1])
            return
        init = {}
        if new:
            init = {key: self.solver.pose(robot).compose(factor.hypotheses[factor.best_weight_index()])}
        self.solver.update([factor], init)
        self._log(t, key, "init" if new else "append")

    def _log(self, t, key, action):
        self.actions.append({"step": int(t), "landmark": str(key), "action": action,
                             "consensus": None, "d": None, "r": None})


def run(log: MeasurementLog, cfg: PipelineConfig | None = None, truth: GroundTruth | None = None
        ) -> RunResult:
    """Process ``log`` step by step; ``truth`` enables the per-step error series."""
    cfg = cfg or PipelineConfig()
    checksum = log_checksum(log)
    fe = _Frontend(cfg)
    solver = fe.solver
    series = []
    start = time.perf_counter()
    for t, odo, detections in log.steps():
        if t == 0:
            solver.update([PriorFactor(X(0), log.prior, fe.noise(log.prior_covariance))],
                          {X(0): log.prior})
        else:
            if odo is None:
                raise ValueError(f"missing odometry into step {t}")
            init = solver.pose(X(t - 1)).compose(odo.measured)
            solver.update([BetweenFactor(X(t - 1), X(t), odo.measured, fe.noise(odo.covariance))],
                          {X(t): init})
        for rec in detections:
            fe.detection(t, rec)
        if truth is not None:
            series.append(_robot_mte(solver, truth, t))
    wall = time.perf_counter() - start
    return RunResult(cfg.method, solver.estimate, dict(fe.classes), fe.actions, wall, checksum, series)


class ObjectSLAM(BaseEstimator):
    """Estimator-style front end over a measurement log.

    ``fit(log, truth=None)`` replays the log and stores the final estimate in
    ``estimate_`` (robot trajectory in ``trajectory_``, landmarks in
    ``landmarks_``), the per-measurement action records in ``actions_`` and,
    when ground truth is given, the per-step robot error in ``error_series_``.
    """

    def __init__(self, method: str = "mm_reinit", sh_choice: str = "best", sh_seed: int = 0,
                 association: str = "oracle", gate: float = 1.0, lam: float = 1.0,
                 kappa: float = 0.5, tol: float = 1e-3, subset_size: int = 1,
                 consensus_fraction: float = 0.5, ransac_iterations: int = 50, seed: int = 0,
                 beta: float = 1e-3, batch_every: int = 25):
        self.method = method
        self.sh_choice = sh_choice
        self.sh_seed = sh_seed
        self.association = association
        self.gate = gate
        self.lam = lam
        self.kappa = kappa
        self.tol = tol
        self.subset_size = subset_size
        self.consensus_fraction = consensus_fraction
        self.ransac_iterations = ransac_iterations
        self.seed = seed
        self.beta = beta
        self.batch_every = batch_every

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            method=self.method,
            sh_choice=self.sh_choice,
            sh_seed=self.sh_seed,
            association=AssociationConfig(self.association, self.gate, self.lam),
            incremental=IncrementalConfig(beta=self.beta, batch_every=self.batch_every),
            reinit=ReinitConfig(self.kappa, self.tol, self.lam),
            ransac=RansacConfig(self.subset_size, math.inf, self.consensus_fraction,
                                self.ransac_iterations, self.seed),
        )

    def fit(self, log: MeasurementLog, truth: GroundTruth | None = None) -> ObjectSLAM:
        res = run(log, self.pipeline_config(), truth)
        self.result_ = res
        self.estimate_ = res.estimate
        self.trajectory_ = [res.estimate[X(t)] for t in range(log.n_steps)]
        self.landmarks_ = {k: res.estimate[k] for k in res.estimate if k.is_landmark}
        self.classes_ = res.classes
        self.actions_ = res.actions
        self.n_reinit_ = res.n_reinit
        self.error_series_ = res.series
        return self
