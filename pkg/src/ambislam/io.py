"""Text formats: pose graphs, measurement logs, ground truth and action logs.

Graph files write poses as ``tx ty tz qx qy qz qw`` (scalar-last quaternion)
and information matrices as the 21 upper-triangular entries, row by row, in
twist order ``rx ry rz tx ty tz``. Floats use the shortest repr that
round-trips, so parse(write(g)) reproduces every number exactly.

Measurement logs and ground truth are JSON; their poses are the 12 entries of
the row-major ``[R | t]`` block so that a log read back from disk is
bit-identical to the one that was written.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .factors import BetweenFactor, Factor, GaussianNoiseModel, Key, PriorFactor
from .graph import FactorGraph, Values
from .max_mixture import MaxMixtureFactor, MixtureComponent
from .se3 import Pose
from .simulator import GroundTruth, LandmarkRecord, MeasurementLog, OdometryRecord

log = logging.getLogger(__name__)

HEADER = ("# pose: tx ty tz qx qy qz qw (quaternion scalar last); "
          "information: upper triangle row-major over rx ry rz tx ty tz")
QUAT_TOL = 1e-6
_IU = np.triu_indices(6)


class FormatError(ValueError):
    pass


# -- pose / matrix encoding -------------------------------------------------------


def pose_to_seven(p: Pose) -> tuple[float, ...]:
    q = Rotation.from_matrix(p.rotation).as_quat()
    if q[3] < 0:
        q = -q
    return tuple(float(v) for v in p.translation) + tuple(float(v) for v in q)


def seven_to_pose(v, where: str = "") -> Pose:
    v = [float(x) for x in v]
    if len(v) != 7 or not all(math.isfinite(x) for x in v):
        raise FormatError(f"{where}: expected 7 finite pose numbers")
    q = np.array(v[3:])
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise FormatError(f"{where}: zero quaternion")
    if abs(norm - 1.0) > QUAT_TOL:
        log.warning("%s: quaternion norm %.9f renormalized", where, norm)
    return Pose(Rotation.from_quat(q / norm).as_matrix(), np.array(v[:3]))


def info_to_21(info: np.ndarray) -> tuple[float, ...]:
    return tuple(float(x) for x in np.asarray(info)[_IU])


def info_from_21(v, where: str = "") -> np.ndarray:
    v = [float(x) for x in v]
    if len(v) != 21:
        raise FormatError(f"{where}: expected 21 information entries")
    m = np.zeros((6, 6))
    m[_IU] = v
    m = m + np.triu(m, 1).T
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise FormatError(f"{where}: information matrix is not positive definite") from exc
    return m


def _fmt(values) -> str:
    return " ".join(repr(float(x)) for x in values)


# -- graph files ------------------------------------------------------------------


@dataclass
class EdgeRecord:
    kind: str  # "PRIOR_SE3", "EDGE_SE3" or "MMEDGE_SE3"
    keys: tuple[str, ...]
    # (weight, pose7, info21) per component; weight is 1 for unimodal edges
    components: list[tuple[float, tuple[float, ...], tuple[float, ...]]]


@dataclass
class GraphFile:
    vertices: dict[str, tuple[float, ...]] = field(default_factory=dict)
    edges: list[EdgeRecord] = field(default_factory=list)

    # text -------------------------------------------------------------------

    def dumps(self) -> str:
        lines = [HEADER]
        for k, v in self.vertices.items():
            lines.append(f"VERTEX_SE3 {k} {_fmt(v)}")
        for e in self.edges:
            keys = " ".join(e.keys)
            if e.kind == "MMEDGE_SE3":
                blocks = " ".join(f"{_fmt([w])} {_fmt(p)} {_fmt(i)}" for w, p, i in e.components)
                lines.append(f"MMEDGE_SE3 {keys} {len(e.components)} {blocks}")
            else:
                _, p, i = e.components[0]
                lines.append(f"{e.kind} {keys} {_fmt(p)} {_fmt(i)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, source: str = "<graph>") -> GraphFile:
        g = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            where = f"{source}:{n}"
            try:
                tag = tok[0]
                if tag == "VERTEX_SE3":
                    _expect(len(tok) == 9, where, "VERTEX_SE3 needs a key and 7 numbers")
                    Key.parse(tok[1])
                    vals = tuple(float(x) for x in tok[2:])
                    seven_to_pose(vals, where)
                    g.vertices[tok[1]] = vals
                elif tag in ("EDGE_SE3", "PRIOR_SE3"):
                    nk = 2 if tag == "EDGE_SE3" else 1
                    _expect(len(tok) == 1 + nk + 28, where, f"{tag} needs {nk} keys, 7 + 21 numbers")
                    keys = tuple(tok[1:1 + nk])
                    for k in keys:
                        Key.parse(k)
                    nums = [float(x) for x in tok[1 + nk:]]
                    info_from_21(nums[7:], where)
                    g.edges.append(EdgeRecord(tag, keys, [(1.0, tuple(nums[:7]), tuple(nums[7:]))]))
                elif tag == "MMEDGE_SE3":
                    keys = (tok[1], tok[2])
                    for k in keys:
                        Key.parse(k)
                    count = int(tok[3])
                    _expect(count >= 1 and len(tok) == 4 + 29 * count, where,
                            "MMEDGE_SE3 needs N blocks of weight + 7 + 21 numbers")
                    nums = [float(x) for x in tok[4:]]
                    comps = []
                    for c in range(count):
                        b = nums[29 * c:29 * (c + 1)]
                        _expect(b[0] > 0, where, "component weights must be positive")
                        info_from_21(b[8:], where)
                        comps.append((b[0], tuple(b[1:8]), tuple(b[8:])))
                    g.edges.append(EdgeRecord(tag, keys, comps))
                else:
                    raise FormatError(f"{where}: unknown record {tag!r}")
            except (ValueError, IndexError) as exc:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(f"{where}: {exc}") from exc
        return g

    @classmethod
    def read(cls, path) -> GraphFile:
        return cls.parse(Path(path).read_text(), str(path))

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    # conversion -----------------------------------------------------------------

    @classmethod
    def from_values(cls, values, graph: FactorGraph | None = None) -> GraphFile:
        g = cls()
        for k in _sorted_keys(values):
            g.vertices[str(k)] = pose_to_seven(values[k])
        for f in (graph.factors if graph is not None else []):
            g.edges.append(_edge_record(f))
        return g

    def values(self) -> Values:
        return Values({Key.parse(k): seven_to_pose(v, k) for k, v in self.vertices.items()})

    def factors(self) -> list[Factor]:
        out: list[Factor] = []
        for e in self.edges:
            keys = [Key.parse(k) for k in e.keys]
            comps = [(w, seven_to_pose(p, e.kind), GaussianNoiseModel.from_information(info_from_21(i)))
                     for w, p, i in e.components]
            if e.kind == "PRIOR_SE3":
                out.append(PriorFactor(keys[0], comps[0][1], comps[0][2]))
            elif e.kind == "EDGE_SE3":
                out.append(BetweenFactor(keys[0], keys[1], comps[0][1], comps[0][2]))
            else:
                out.append(MaxMixtureFactor(keys[0], keys[1],
                                            [MixtureComponent(p, n, w) for w, p, n in comps]))
        return out

    def graph(self) -> FactorGraph:
        return FactorGraph(self.factors())


def _expect(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise FormatError(f"{where}: {msg}")


def _sorted_keys(keys):
    return sorted(keys, key=lambda k: (k.kind != "x", k.index))


def _edge_record(f: Factor) -> EdgeRecord:
    keys = tuple(str(k) for k in f.keys)
    if isinstance(f, MaxMixtureFactor):
        return EdgeRecord("MMEDGE_SE3", keys, [
            (float(c.weight), pose_to_seven(c.measured), info_to_21(c.noise.information))
            for c in f.mixture])
    (measured, noise, _), = f.components()
    kind = "PRIOR_SE3" if isinstance(f, PriorFactor) else "EDGE_SE3"
    return EdgeRecord(kind, keys, [(1.0, pose_to_seven(measured), info_to_21(noise.information))])


def write_values(path, values) -> None:
    GraphFile.from_values(values).write(path)


def read_values(path) -> Values:
    return GraphFile.read(path).values()


# -- measurement logs ---------------------------------------------------------------

LOG_POSE_FORMAT = "row-major [R | t]: r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz"


def pose_to_12(p: Pose) -> list[float]:
    return [float(x) for x in p.matrix()[:3].ravel()]


def pose_from_12(v, where: str = "") -> Pose:
    m = np.array(v, dtype=float)
    if m.size != 12 or not np.all(np.isfinite(m)):
        raise FormatError(f"{where}: expected 12 finite pose numbers")
    m = m.reshape(3, 4)
    R = m[:, :3]
    if np.abs(R.T @ R - np.eye(3)).max() > QUAT_TOL or np.linalg.det(R) < 0:
        raise FormatError(f"{where}: rotation block is not orthonormal")
    return Pose(R, m[:, 3])



def _cov_list(c) -> list[float]:
    return [float(x) for x in np.asarray(c).ravel()]


def _cov(v, where) -> np.ndarray:
    m = np.array(v, dtype=float)
    if m.size != 36:
        raise FormatError(f"{where}: covariance needs 36 entries")
    return m.reshape(6, 6)


def dump_log(mlog: MeasurementLog) -> str:
    lines = [json.dumps({
        "type": "header", "n_steps": mlog.n_steps, "pose_format": LOG_POSE_FORMAT,
        "prior": pose_to_12(mlog.prior), "prior_covariance": _cov_list(mlog.prior_covariance),
        "meta": mlog.meta}, sort_keys=True)]
    for t, odo, dets in mlog.steps():
        if odo is not None:
            lines.append(json.dumps({"type": "odometry", "step": odo.step,
                                     "measured": pose_to_12(odo.measured),
                                     "covariance": _cov_list(odo.covariance)}, sort_keys=True))
        for r in dets:
            lines.append(json.dumps({
                "type": "landmark", "step": r.step, "landmark": r.landmark, "label": r.label,
                "hypotheses": [pose_to_12(h) for h in r.hypotheses],
                "weights": [float(w) for w in r.weights],
                "covariance": _cov_list(r.covariance), "true_index": r.true_index}, sort_keys=True))
    return "\n".join(lines) + "\n"


def parse_log(text: str, source: str = "<log>") -> MeasurementLog:
    mlog = None
    last_step = -1
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        where = f"{source}:{n}"
        try:
            rec = json.loads(line)
            kind = rec["type"]
            if kind == "header":
                mlog = MeasurementLog(int(rec["n_steps"]), pose_from_12(rec["prior"], where),
                                      _cov(rec["prior_covariance"], where), meta=rec.get("meta", {}))
                continue
            if mlog is None:
                raise FormatError(f"{where}: record before header")
            step = int(rec["step"])
            if step < last_step:
                raise FormatError(f"{where}: records are not time ordered")
            last_step = step
            if kind == "odometry":
                mlog.odometry.append(OdometryRecord(step, pose_from_12(rec["measured"], where),
                                                    _cov(rec["covariance"], where)))
            elif kind == "landmark":
                hyps = [pose_from_12(h, where) for h in rec["hypotheses"]]
                if not hyps or len(rec["weights"]) != len(hyps):
                    raise FormatError(f"{where}: hypotheses and weights disagree")
                mlog.landmarks.append(LandmarkRecord(
                    step, int(rec["landmark"]), str(rec["label"]), hyps,
                    [float(w) for w in rec["weights"]], _cov(rec["covariance"], where),
                    int(rec.get("true_index", -1))))
            else:
                raise FormatError(f"{where}: unknown record type {kind!r}")
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{where}: {exc}") from exc
    if mlog is None:
        raise FormatError(f"{source}: missing header")
    return mlog


def write_log(path, mlog: MeasurementLog) -> None:
    Path(path).write_text(dump_log(mlog))


def read_log(path) -> MeasurementLog:
    return parse_log(Path(path).read_text(), str(path))


def dump_truth(truth: GroundTruth) -> str:
    return json.dumps({
        "pose_format": LOG_POSE_FORMAT,
        "trajectory": [pose_to_12(p) for p in truth.trajectory],
        "landmarks": {str(j): pose_to_12(p) for j, p in sorted(truth.landmarks.items())},
        "classes": {str(j): c for j, c in sorted(truth.classes.items())},
    }, sort_keys=True, indent=1) + "\n"


def parse_truth(text: str, source: str = "<truth>") -> GroundTruth:
    try:
        d = json.loads(text)
        traj = [pose_from_12(p, source) for p in d["trajectory"]]
        lms = {int(j): pose_from_12(p, source) for j, p in d["landmarks"].items()}
        classes = {int(j): str(c) for j, c in d.get("classes", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{source}: {exc}") from exc
    return GroundTruth(traj, lms, classes)


def write_truth(path, truth: GroundTruth) -> None:
    Path(path).write_text(dump_truth(truth))


def read_truth(path) -> GroundTruth:
    return parse_truth(Path(path).read_text(), str(path))


def truth_values(truth: GroundTruth) -> Values:
    poses = {Key("x", i): p for i, p in enumerate(truth.trajectory)}
    poses.update({Key("l", j): p for j, p in sorted(truth.landmarks.items())})
    return Values(poses)


def dump_actions(actions: list[dict]) -> str:
    return "".join(json.dumps(a, sort_keys=True) + "\n" for a in actions)
