"""Error metrics, method comparison and the re-initialization timing benchmark."""

from __future__ import annotations

import hashlib
import math
import statistics
import time
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from . import se3
from .factors import BetweenFactor, GaussianNoiseModel, Key, L, PriorFactor, X
from .incremental import IncrementalConfig, IncrementalSolver
from .optimizer import optimize_batch
from .pipeline import METHODS, PipelineConfig, RunResult, canonical_method, log_checksum, run
from .se3 import Pose
from .simulator import GroundTruth, MeasurementLog


@dataclass
class ErrorReport:
    mte_robot: float = 0.0
    mte_landmark: float = 0.0
    mre_robot: float = 0.0
    mre_landmark: float = 0.0
    wall_time: float = 0.0
    n_robot: int = 0
    n_landmark: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _mean_errors(pairs: list[tuple[Pose, Pose]]) -> tuple[float, float]:
    if not pairs:
        return 0.0, 0.0
    Re, te = se3.stack(p for p, _ in pairs)
    Rg, tg = se3.stack(q for _, q in pairs)
    trans = np.linalg.norm(te - tg, axis=1)
    rot = se3.rotation_angle(np.swapaxes(Rg, 1, 2) @ Re)
    return float(math.fsum(trans) / len(pairs)), float(np.degrees(math.fsum(rot) / len(pairs)))


def match_landmarks(estimate: Mapping[Key, Pose], classes: Mapping[Key, str],
                    truth: GroundTruth) -> dict[Key, int]:
    """Map estimated landmarks to true ids by same-class nearest translation."""
    out = {}
    for k in sorted((k for k in estimate if k.is_landmark), key=lambda k: k.index):
        best, best_d = None, math.inf
        for j, p in truth.landmarks.items():
            if classes and truth.classes and classes.get(k) != truth.classes.get(j):
                continue
            d = float(np.linalg.norm(estimate[k].translation - p.translation))
            if d < best_d:
                best, best_d = j, d
        if best is not None:
            out[k] = best
    return out


def compute_errors(estimate: Mapping[Key, Pose], truth: GroundTruth,
                   correspondence: Mapping[Key, int] | None = None,
                   strict: bool = False) -> ErrorReport:
    """Final-time MTE (meters) and MRE (degrees), no alignment.

    Landmark keys map to true ids through ``correspondence`` (default: the
    key index is the true id). With ``strict`` every estimated key must have
    a ground-truth counterpart.
    """
    if strict:
        mapped = correspondence if correspondence is not None else {}
        missing = [str(k) for k in estimate
                   if (k.is_landmark and (k.index not in truth.landmarks if correspondence is None
                                          else k not in mapped))
                   or (not k.is_landmark and not 0 <= k.index < len(truth.trajectory))]
        if missing:
            raise ValueError(f"keys without ground truth: {', '.join(sorted(missing)[:10])}")
    robots = [(estimate[k], truth.trajectory[k.index]) for k in estimate
              if not k.is_landmark and 0 <= k.index < len(truth.trajectory)]
    if correspondence is None:
        correspondence = {k: k.index for k in estimate if k.is_landmark}
    lms = [(estimate[k], truth.landmarks[j]) for k, j in correspondence.items()
           if k in estimate and j in truth.landmarks]
    if not robots and not lms:
        raise ValueError("estimate and ground truth share no variables")
    mte_r, mre_r = _mean_errors(robots)
    mte_l, mre_l = _mean_errors(lms)
    return ErrorReport(mte_r, mte_l, mre_r, mre_l, 0.0, len(robots), len(lms))


def evaluate_run(result: RunResult, truth: GroundTruth, association: str = "oracle") -> ErrorReport:
    corr = None
    if association != "oracle":
        corr = match_landmarks(result.estimate, result.classes, truth)
    rep = compute_errors(result.estimate, truth, corr)
    rep.wall_time = result.wall_time
    return rep


@dataclass
class Comparison:
    reports: dict[str, ErrorReport]
    results: dict[str, RunResult]
    checksum: str = ""

    def series(self) -> dict[str, list[float]]:
        return {m: r.series for m, r in self.results.items()}


def run_comparison(log: MeasurementLog, truth: GroundTruth, methods: Iterable[str] = METHODS,
                   cfg: PipelineConfig | None = None) -> Comparison:
    """Run each method on the same log; the log digest is checked before and after."""
    cfg = cfg or PipelineConfig()
    checksum = log_checksum(log)
    reports, results = {}, {}
    for name in methods:
        m = canonical_method(name)
        res = run(log, replace(cfg, method=m), truth)
        if res.checksum != checksum:
            raise RuntimeError(f"method {m} received a different measurement stream")
        results[m] = res
        reports[m] = evaluate_run(res, truth, cfg.association.mode)
    if log_checksum(log) != checksum:
        raise RuntimeError("measurement log was modified during the comparison")
    return Comparison(reports, results, checksum)


def first_revisit_step(log: MeasurementLog) -> int | None:
    """First step at which some landmark is seen with its true hypothesis at a
    different index than on its first sighting (an opposite-side revisit for
    centrally symmetric landmarks)."""
    first: dict[int, int] = {}
    for r in log.landmarks:
        if len(r.hypotheses) < 2:
            continue
        if r.landmark not in first:
            first[r.landmark] = r.true_index
        elif r.true_index != first[r.landmark]:
            return r.step
    return None


# -- timing benchmark -------------------------------------------------------------


@dataclass
class BenchConfig:
    chain_length: int = 1000
    landmark_counts: tuple[int, ...] = (5, 10)
    edge_counts: tuple[int, ...] = (20, 50)
    repetitions: int = 10
    seed: int = 0
    warmup_chunk: int = 100


@dataclass
class BenchRow:
    chain_length: int
    landmarks: int
    edges: int
    median_plain: float
    median_reinit: float
    median_batch: float
    mean_plain: float
    mean_reinit: float
    mean_batch: float
    workload: str = ""  # digest of the generated problems, equal across runs with equal config

    def as_dict(self) -> dict:
        return asdict(self)


_ODO_NOISE = GaussianNoiseModel.from_sigmas([0.01] * 3 + [0.05] * 3)
_LMK_NOISE = GaussianNoiseModel.from_sigmas([0.05] * 3 + [0.1] * 3)


def _random_problem(n: int, n_landmarks: int, n_edges: int, rng: np.random.Generator):
    """Chain of ``n`` poses with ``n_edges`` landmark edges to random poses."""
    truth = [Pose.identity()]
    odo = []
    for _ in range(1, n):
        step = se3.exp(np.concatenate([rng.normal(0, 0.05, 3), [1.0, 0, 0] + rng.normal(0, 0.1, 3)]))
        odo.append(se3.perturb(step, _ODO_NOISE.covariance, rng))
        truth.append(truth[-1].compose(step))
    lm_truth = [se3.exp(rng.normal(0, [0.5, 0.5, 0.5, n / 4, 5, 1])) for _ in range(n_landmarks)]
    edges = {}
    # every landmark gets at least one edge, the rest are random
    owners = list(range(n_landmarks)) + list(rng.integers(0, n_landmarks, max(0, n_edges - n_landmarks)))
    for j in owners:
        t = int(rng.integers(0, n))
        z = se3.perturb(truth[t].between(lm_truth[j]), _LMK_NOISE.covariance, rng)
        edges.setdefault(t, []).append((j, z))
    return truth, odo, lm_truth, edges


def _build(n, odo, edges, cfg: IncrementalConfig, chunk: int) -> IncrementalSolver:
    solver = IncrementalSolver(cfg)
    solver.update([PriorFactor(X(0), Pose.identity(), _ODO_NOISE)], {X(0): Pose.identity()})
    est = {0: Pose.identity()}
    factors, values = [], {}
    for t in range(1, n):
        est[t] = est[t - 1].compose(odo[t - 1])
        factors.append(BetweenFactor(X(t - 1), X(t), odo[t - 1], _ODO_NOISE))
        values[X(t)] = est[t]
        for j, z in edges.get(t, []):
            key = L(j)
            if key not in solver and key not in values:
                values[key] = est[t].compose(z)
            factors.append(BetweenFactor(X(t), key, z, _LMK_NOISE))
        if t % chunk == 0 or t == n - 1:
            solver.update(factors, values, step_kind="batch" if t == n - 1 else "plain")
            factors, values = [], {}
    for j, z in edges.get(0, []):
        key = L(j)
        solver.update([BetweenFactor(X(0), key, z, _LMK_NOISE)],
                      {} if key in solver else {key: solver.pose(X(0)).compose(z)})
    return solver


def bench_reinit(cfg: BenchConfig | None = None) -> list[BenchRow]:
    """Time a plain incremental step, an incremental step that re-initializes
    one landmark, and a batch solve of the same re-initialized problem, on
    randomized chain graphs."""
    cfg = cfg or BenchConfig()
    if cfg.chain_length < 2 or cfg.repetitions < 1:
        raise ValueError("chain_length must be >= 2 and repetitions >= 1")
    rows = []
    for n_l in cfg.landmark_counts:
        for n_e in cfg.edge_counts:
            if n_l < 1 or n_e < 1:
                raise ValueError("landmark and edge counts must be >= 1")
            plain, reinit, batch = [], [], []
            digest = hashlib.sha256()
            for rep in range(cfg.repetitions):
                rng = np.random.default_rng([cfg.seed, n_l, n_e, rep])
                n = cfg.chain_length
                truth, odo, lm_truth, edges = _random_problem(n, n_l, n_e, rng)
                icfg = IncrementalConfig(batch_every=0)
                solver = _build(n, odo, edges, icfg, max(1, cfg.warmup_chunk))
                # one new pose and one landmark edge, as in a regular SLAM step
                step = se3.perturb(Pose.from_xyz_yaw(1.0, 0, 0, 0.0), _ODO_NOISE.covariance, rng)
                j = int(rng.integers(n_l))
                z = se3.perturb(step.inverse().compose(truth[-1].between(lm_truth[j])),
                                _LMK_NOISE.covariance, rng)
                new_x = X(n)
                factors = [BetweenFactor(X(n - 1), new_x, step, _ODO_NOISE),
                           BetweenFactor(new_x, L(j), z, _LMK_NOISE)]
                t0 = time.perf_counter()
                solver.update(factors, {new_x: solver.pose(X(n - 1)).compose(step)})
                plain.append(time.perf_counter() - t0)
                bad = solver.pose(L(j)).compose(se3.exp(rng.normal(0, [0.5] * 3 + [1.0] * 3)))
                for p in (*odo, step, z, bad):
                    digest.update(p.matrix().round(9).tobytes())
                start = solver.estimate.updated({L(j): bad})
                t0 = time.perf_counter()
                solver.reinitialize_landmark(L(j), bad)
                reinit.append(time.perf_counter() - t0)
                # the same correction handled by a from-scratch batch solve
                t0 = time.perf_counter()
                optimize_batch(solver.graph, start, icfg.solver)
                batch.append(time.perf_counter() - t0)
            rows.append(BenchRow(cfg.chain_length, n_l, n_e,
                                 statistics.median(plain), statistics.median(reinit),
                                 statistics.median(batch), statistics.fmean(plain),
                                 statistics.fmean(reinit), statistics.fmean(batch),
                                 digest.hexdigest()[:16]))
    return rows
