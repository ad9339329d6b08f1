"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (visible with
``pytest -s`` or in the captured output of a failure) before asserting.
"""

import csv
import math
import time

import numpy as np

from ambislam import se3
from ambislam.association import AssociationConfig
from ambislam.cli import main
from ambislam.disambiguation import RansacConfig, ReinitConfig, robust_pose_average
from ambislam.evaluation import (BenchConfig, bench_reinit, evaluate_run, first_revisit_step,
                                 run_comparison)
from ambislam.factors import BetweenFactor, GaussianNoiseModel, L, PriorFactor, X
from ambislam.graph import FactorGraph
from ambislam.incremental import IncrementalSolver
from ambislam.max_mixture import MaxMixtureFactor
from ambislam.optimizer import optimize_batch
from ambislam.pipeline import PipelineConfig, run
from ambislam.se3 import Pose
from ambislam.simulator import ScenarioConfig, generate

from .conftest import VIEW_LANDMARK, random_pose
from .graphs import random_graph_stream
from .test_disambiguation import _three_view_run, brute_force_majority, chordal_mean, six_two_fixture
from .test_factors import _near, numeric_jacobian, random_noise
from .test_max_mixture import brute_force, random_mixture


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    assert ok, line


def test_criterion_01_geometry():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    trip = axioms = 0.0
    for _ in range(1000):
        axis = rng.normal(size=3)
        w = axis / np.linalg.norm(axis) * rng.uniform(0, math.pi - 1e-3)
        xi = np.concatenate([w, rng.normal(0, 2, 3)])
        trip = max(trip, np.abs(se3.log(se3.exp(xi)) - xi).max())
        a, b, c = (random_pose(rng) for _ in range(3))
        axioms = max(axioms,
                     np.abs(a.compose(b).compose(c).matrix() - a.compose(b.compose(c)).matrix()).max(),
                     np.abs(a.compose(a.inverse()).matrix() - np.eye(4)).max(),
                     np.abs(a.inverse().compose(a).matrix() - np.eye(4)).max(),
                     np.abs(a.compose(Pose.identity()).matrix() - a.matrix()).max())
    elapsed = time.perf_counter() - start
    verdict(1, trip < 1e-9 and axioms < 1e-10 and elapsed < 5,
            f"round trip {trip:.1e}, axioms {axioms:.1e}, {elapsed:.2f}s")


def _jacobian_gap(factor, values) -> float:
    blocks, _ = factor.linearize(values)
    return max(np.abs(J - numeric_jacobian(factor, values, k)).max() for k, J in blocks.items())


def test_criterion_02_jacobians():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    gaps = {"prior": 0.0, "between": 0.0, "max-mixture": 0.0}
    for _ in range(200):
        z = random_pose(rng)
        gaps["prior"] = max(gaps["prior"], _jacobian_gap(PriorFactor(X(0), z, random_noise(rng)),
                                                         {X(0): _near(z, rng)}))
        a = random_pose(rng)
        f = BetweenFactor(X(0), L(0), z, random_noise(rng))
        gaps["between"] = max(gaps["between"], _jacobian_gap(f, {X(0): a, L(0): _near(a.compose(z), rng)}))
    done = 0
    while done < 200:
        a = random_pose(rng)
        hyps = [random_pose(rng) for _ in range(int(rng.integers(2, 5)))]
        f = MaxMixtureFactor.from_hypotheses(X(0), L(0), hyps, random_noise(rng),
                                             rng.uniform(0.2, 1.0, len(hyps)))
        vals = {X(0): a, L(0): _near(a.compose(hyps[0]), rng)}
        costs = np.sort(f.component_errors(vals))
        if costs[1] - costs[0] < 1e-2:
            continue
        gaps["max-mixture"] = max(gaps["max-mixture"], _jacobian_gap(f, vals))
        done += 1
    elapsed = time.perf_counter() - start
    worst = max(gaps.values())
    verdict(2, worst < 1e-5 and elapsed < 30,
            ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()) + f", {elapsed:.1f}s")


def test_criterion_03_max_mixture_exactness():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        f = random_mixture(rng)
        vals = {X(0): random_pose(rng), L(0): random_pose(rng)}
        worst = max(worst, abs(f.error(vals) - brute_force(f, vals)))
    single = 0.0
    for _ in range(1000):
        z, n = random_pose(rng), GaussianNoiseModel.from_sigmas(rng.uniform(0.05, 1, 6))
        vals = {X(0): random_pose(rng), L(0): random_pose(rng)}
        gap = (MaxMixtureFactor.from_hypotheses(X(0), L(0), [z], n).error(vals)
               - BetweenFactor(X(0), L(0), z, n).error(vals))
        single = max(single, abs(gap))
    verdict(3, worst < 1e-12 and single < 1e-12, f"mixture gap {worst:.1e}, single component gap {single:.1e}")


def test_criterion_04_incremental_vs_batch():
    worst = 0.0
    for seed in range(20):
        stream = list(random_graph_stream(np.random.default_rng(1000 + seed), 100, 10))
        solver = IncrementalSolver()
        factors, init = [], {}
        for f, v in stream:
            solver.update(f, v)
            factors += f
            init.update(v)
        graph = FactorGraph(factors)
        ref = graph.total_error(optimize_batch(graph, init)[0])
        worst = max(worst, abs(solver.total_error() - ref) / ref)
    verdict(4, worst < 1e-6, f"worst relative gap {worst:.1e} over 20 graphs")


def test_criterion_05_consensus():
    rng = np.random.default_rng(5)
    poses, expected = six_two_fixture(rng)
    majority = sorted(brute_force_majority(poses, 0.5)) == expected
    oracle = chordal_mean([poses[i] for i in expected])
    hits = 0
    for seed in range(100):
        found = robust_pose_average(poses, RansacConfig(inlier_threshold=0.5, seed=seed))
        hits += found is not None and sorted(found[1].tolist()) == expected \
            and se3.distance(found[0], oracle) < 0.05
    split = [Pose.identity()] * 4 + [Pose.from_xyz_yaw(5, 0, 0, 0)] * 4
    none = all(robust_pose_average(split, RansacConfig(inlier_threshold=0.5, seed=s)) is None
               for s in range(100))
    verdict(5, majority and hits == 100 and none, f"{hits}/100 majority hits, 50/50 split -> none: {none}")


def test_criterion_06_three_view_reinit():
    solver, dr, errors = _three_view_run()
    actions = [a for a, _, _ in errors]
    _, before, after = errors[2]
    rot = math.degrees(se3.angle_between(solver.pose(L(1)), VIEW_LANDMARK))
    ok = actions == ["init", "append", "reinit"] and dr.n_reinit == 1 and after < before and rot < 5
    verdict(6, ok, f"actions {actions}, error {before:.3g} -> {after:.3g}, landmark rotation error {rot:.2f} deg")


# tuned for the mug scenes; see README
MUG_REINIT = PipelineConfig(method="mm_reinit", reinit=ReinitConfig(kappa=0.9, lam=20.0),
                            ransac=RansacConfig(consensus_fraction=0.35))


def test_criterion_07_mug_ordering():
    start = time.perf_counter()
    wins, mre = {}, {}
    for scale in (5, 10, 20):
        wins[scale] = 0
        for seed in range(10):
            truth, log = generate(ScenarioConfig(kind="mugs", seed=seed, covariance_scale=scale))
            sh = evaluate_run(run(log, PipelineConfig(method="sh")), truth)
            mm = evaluate_run(run(log, PipelineConfig(method="mm")), truth)
            mr = evaluate_run(run(log, MUG_REINIT), truth)
            wins[scale] += all(mr.mte_robot < o.mte_robot and mr.mte_landmark < o.mte_landmark
                               for o in (sh, mm))
            if scale == 5:
                mre.setdefault("robot", []).append(mr.mre_robot)
                mre.setdefault("landmark", []).append(mr.mre_landmark)
    elapsed = time.perf_counter() - start
    mean_mre = {k: float(np.mean(v)) for k, v in mre.items()}
    ok = all(w >= 8 for w in wins.values()) and max(mean_mre.values()) < 15 and elapsed < 300
    verdict(7, ok, f"wins per scale {wins} (need >= 8), MRE at 5x robot {mean_mre['robot']:.1f} "
                   f"landmark {mean_mre['landmark']:.1f} deg, {elapsed:.0f}s")


def test_criterion_08_card_failure():
    good = 0
    details = []
    cfg = PipelineConfig(association=AssociationConfig(mode="nearest_neighbor"))
    for seed in range(10):
        truth, log = generate(ScenarioConfig(kind="cards", seed=seed))
        revisit = first_revisit_step(log)
        comp = run_comparison(log, truth, methods=("sh", "mm_reinit"), cfg=cfg)
        sh = np.asarray(comp.results["sh"].series)
        mr = comp.results["mm_reinit"].series[-1]
        ratio = sh[-1] / sh[:revisit].mean()
        good += ratio > 3 and mr < 0.25 * sh[-1]
        details.append(f"{ratio:.0f}x/{mr / sh[-1]:.2f}")
    verdict(8, good >= 8, f"{good}/10 seeds (SH growth / MM_reinit-to-SH ratio: {' '.join(details)})")


def test_criterion_09_reinit_timing():
    rows = bench_reinit(BenchConfig(chain_length=1000, repetitions=10))
    sparse = all(r.edges <= 0.05 * r.chain_length for r in rows)
    faster = all(r.median_reinit < r.median_batch for r in rows)
    detail = ", ".join(f"L{r.landmarks}/E{r.edges}: {r.median_reinit * 1e3:.1f} vs {r.median_batch * 1e3:.1f} ms"
                       for r in rows)
    verdict(9, sparse and faster, detail)


CLI_CONFIG = """\
seed: 3
scenario: {kind: cards}
comparison: {seeds: [3, 4]}
bench: {chain_length: 200, landmark_counts: [3], edge_counts: [5, 10], repetitions: 3, warmup_chunk: 50}
"""
TIMING_COLUMNS = {f"{s}_{m}" for s in ("median", "mean") for m in ("plain", "reinit", "batch")}


def _cli_outputs(root):
    root.mkdir()
    cfg = root / "run.yaml"
    cfg.write_text(CLI_CONFIG)
    commands = [["simulate", "--config", cfg, "--out", root / "log.jsonl"]]
    for m in ("sh", "mm", "mm-reinit"):
        commands.append(["solve", "--log", root / "log.jsonl", "--config", cfg, "--method", m,
                         "--out", root / f"{m}.g2o"])
        commands.append(["eval", "--estimate", root / f"{m}.g2o", "--truth", root / "log.truth.json",
                         "--out", root / f"{m}.json"])
    commands.append(["compare", "--config", cfg, "--out-dir", root / "cmp"])
    commands.append(["bench-reinit", "--config", cfg, "--out", root / "bench.csv"])
    for argv in commands:
        assert main([str(a) for a in argv]) == 0
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "bench.csv":
            out[str(p.relative_to(root))] = p.read_bytes()
    # wall-clock medians are the one thing that cannot repeat
    rows = list(csv.DictReader((root / "bench.csv").open()))
    out["bench.csv"] = repr([{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in rows])
    return out


def test_criterion_10_determinism(tmp_path):
    a, b = _cli_outputs(tmp_path / "a"), _cli_outputs(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = set(a) == set(b) and not differing
    verdict(10, ok, f"{len(a)} output files, differing: {differing or 'none'} "
                    f"(bench timing columns excluded)")
