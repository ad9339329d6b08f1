"""Synthetic object-SLAM scenarios with ambiguous landmark pose measurements.

Robot poses are planar (z up). Landmark measurements are relative poses
``between(x_t, l_j)`` perturbed on the right by tangent-space Gaussian noise.
Ambiguous detections add copies of the noisy measurement rotated about the
landmark's own vertical axis:

* ``occlusion_3`` (mugs): when the handle faces away from the camera the
  detection carries the measurement and its +/-30 degree rotations, in a
  seeded random order; otherwise a single hypothesis.
* ``central_symmetry_2`` (cards): the measurement and its half-turn. The
  hypothesis whose relative yaw lies in (-90, 90] degrees is listed first,
  which is what an appearance-based estimator would report as most likely.
* ``unimodal``: the measurement only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import se3
from .se3 import Pose

MODELS = ("central_symmetry_2", "occlusion_3", "unimodal")
KINDS = ("mugs", "cards", "custom")
ORDERS = ("shuffle", "canonical", "truth_first")

# diagonal of the default measurement covariance, rotation components first
DEFAULT_MEASUREMENT_VARIANCES = (0.01, 0.01, 0.01, 0.2, 0.2, 0.02)

# per-kind defaults for every field left as None
PRESETS = {
    "mugs": dict(
        n_steps=200, n_landmarks=10, loop_length=60.0, loop_width=30.0, landmark_offset=(4.0, 12.0),
        step_length=2.0, sensor_range=20.0,
        odometry_sigmas=(0.02, 0.02, 0.1, 0.1, 0.1, 0.02),
        measurement_variances=DEFAULT_MEASUREMENT_VARIANCES,
    ),
    "cards": dict(
        n_steps=0, n_landmarks=8, loop_length=0.0, loop_width=0.0, landmark_offset=(0.0, 0.0),
        step_length=0.4, sensor_range=5.0,
        odometry_sigmas=(0.002, 0.002, 0.01, 0.02, 0.02, 0.005),
        measurement_variances=tuple(0.1 * v for v in DEFAULT_MEASUREMENT_VARIANCES),
    ),
    "custom": dict(
        n_steps=100, n_landmarks=5, loop_length=16.0, loop_width=8.0, landmark_offset=(1.0, 3.0),
        step_length=0.4, sensor_range=5.0,
        odometry_sigmas=(0.002, 0.002, 0.01, 0.02, 0.02, 0.005),
        measurement_variances=DEFAULT_MEASUREMENT_VARIANCES,
    ),
}

# variances logged for noiseless channels so the factors stay well defined
_VARIANCE_FLOOR = 1e-12


@dataclass
class ScenarioConfig:
    """Scenario geometry, noise and ambiguity model.

    Fields left as ``None`` take the per-kind value from :data:`PRESETS`.
    Mugs drive a rectangular loop out and back with objects scattered beside
    the path; cards are laid on a grid swept by a lawnmower round trip (the
    card count is ``rows * cols`` and the step count follows from the path).
    """

    kind: str = "mugs"
    seed: int = 0
    n_steps: int | None = None
    n_landmarks: int | None = None
    loop_length: float | None = None
    loop_width: float | None = None
    round_trip: bool = True
    landmark_offset: tuple[float, float] | None = None
    rows: int = 2
    cols: int = 4
    spacing: float = 2.0
    n_classes: int = 6
    step_length: float | None = None
    max_turn_deg: float = 30.0
    odometry_sigmas: tuple[float, ...] | None = None
    measurement_variances: tuple[float, ...] | None = None
    covariance_scale: float = 1.0
    prior_sigmas: tuple[float, ...] = (1e-3,) * 6
    model: str = ""
    corruption_deg: tuple[float, ...] = ()
    hypothesis_order: str = ""
    sensor_range: float | None = None
    fov_half_angle_deg: float = 60.0
    min_range: float = 0.3
    occlusion_cos: float = 0.0
    max_detections_per_step: int = 0  # 0 = unlimited

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        for name, value in PRESETS[self.kind].items():
            if getattr(self, name) is None:
                setattr(self, name, value)
        if self.kind == "cards":
            self.n_landmarks = self.rows * self.cols
        if not self.model:
            self.model = {"mugs": "occlusion_3", "cards": "central_symmetry_2"}.get(self.kind, "unimodal")
        if self.model not in MODELS:
            raise ValueError(f"unknown measurement model {self.model!r}")
        if not self.corruption_deg:
            self.corruption_deg = {"occlusion_3": (30.0, -30.0), "central_symmetry_2": (180.0,)}.get(
                self.model, ())
        if self.model != "unimodal" and not all(abs(a) > 0 for a in self.corruption_deg):
            raise ValueError("corruption rotations must be nonzero")
        if not self.hypothesis_order:
            self.hypothesis_order = "canonical" if self.model == "central_symmetry_2" else "shuffle"
        if self.hypothesis_order not in ORDERS:
            raise ValueError(f"unknown hypothesis order {self.hypothesis_order!r}")
        if not self.covariance_scale > 0:
            raise ValueError("covariance_scale must be positive")
        if self.kind == "cards":
            if self.rows < 1 or self.cols < 1:
                raise ValueError("rows and cols must be >= 1")
        elif self.n_steps < 1 or self.n_landmarks < 1:
            raise ValueError("n_steps and n_landmarks must be >= 1")
        if self.step_length <= 0 or self.sensor_range <= 0:
            raise ValueError("step_length and sensor_range must be positive")
        for name in ("odometry_sigmas", "measurement_variances", "prior_sigmas"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 6 or any(not x >= 0 for x in v):
                raise ValueError(f"{name} needs 6 non-negative entries")
            setattr(self, name, v)
        self.corruption_deg = tuple(float(a) for a in self.corruption_deg)
        self.landmark_offset = tuple(float(a) for a in self.landmark_offset)

    @property
    def measurement_covariance(self) -> np.ndarray:
        return self.covariance_scale * np.diag(self.measurement_variances)

    @property
    def odometry_covariance(self) -> np.ndarray:
        return np.diag(np.square(self.odometry_sigmas))

    @property
    def prior_covariance(self) -> np.ndarray:
        return np.diag(np.square(self.prior_sigmas))


@dataclass
class GroundTruth:
    trajectory: list[Pose]
    landmarks: dict[int, Pose]
    classes: dict[int, str] = field(default_factory=dict)


@dataclass
class OdometryRecord:
    step: int
    measured: Pose
    covariance: np.ndarray

    @property
    def prev(self) -> int:
        return self.step - 1


@dataclass
class LandmarkRecord:
    step: int
    landmark: int
    label: str
    hypotheses: list[Pose]
    weights: list[float]
    covariance: np.ndarray
    true_index: int = -1


@dataclass
class MeasurementLog:
    n_steps: int
    prior: Pose
    prior_covariance: np.ndarray
    odometry: list[OdometryRecord] = field(default_factory=list)
    landmarks: list[LandmarkRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def steps(self) -> Iterator[tuple[int, OdometryRecord | None, list[LandmarkRecord]]]:
        """Time-ordered ``(t, odometry into t, detections at t)``."""
        odo = {r.step: r for r in self.odometry}
        det: dict[int, list[LandmarkRecord]] = {}
        for r in self.landmarks:
            det.setdefault(r.step, []).append(r)
        for t in range(self.n_steps):
            yield t, odo.get(t), det.get(t, [])


# -- trajectories -----------------------------------------------------------------


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def lawnmower_trajectory(rows: int, cols: int, spacing: float, step: float | None = None,
                         max_turn: float = math.pi / 2) -> list[Pose]:
    """Serpentine sweep over a rows x cols grid followed by the reverse path.

    Every heading change becomes an extra pose at the same position. With
    ``step`` the path is densified (see :func:`densify`).
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    pts = []
    for r in range(rows):
        cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        pts.extend((c * spacing, r * spacing) for c in cs)
    pts = pts + pts[-2::-1] if len(pts) > 1 else pts
    # duplicated turnaround point: keep both so the heading flips in place
    if len(pts) > 1:
        pts.insert(len(pts) // 2, pts[len(pts) // 2])
    poses = _headed(pts)
    return densify(poses, step, max_turn) if step else poses


def _headed(points: list[tuple[float, float]]) -> list[Pose]:
    out: list[Pose] = []
    heading = 0.0
    n = len(points)
    for i, (x, y) in enumerate(points):
        # heading of the next distinct segment
        for j in range(i + 1, n):
            dx, dy = points[j][0] - x, points[j][1] - y
            if math.hypot(dx, dy) > 1e-12:
                heading = math.atan2(dy, dx)
                break
        else:
            if i > 0:
                px, py = points[i - 1]
                if math.hypot(x - px, y - py) > 1e-12:
                    heading = math.atan2(y - py, x - px)
        if out and math.hypot(x - out[-1].translation[0], y - out[-1].translation[1]) < 1e-12 \
                and abs(_wrap(heading - out[-1].yaw())) < 1e-12:
            continue
        if out:
            prev = out[-1]
            moved = math.hypot(x - prev.translation[0], y - prev.translation[1]) > 1e-12
            travel = math.atan2(y - prev.translation[1], x - prev.translation[0]) if moved else None
            if moved and abs(_wrap(travel - prev.yaw())) > 1e-9:
                out.append(Pose.from_xyz_yaw(prev.translation[0], prev.translation[1], 0.0, travel))
            if moved and abs(_wrap(heading - travel)) > 1e-9:
                out.append(Pose.from_xyz_yaw(x, y, 0.0, travel))
        out.append(Pose.from_xyz_yaw(x, y, 0.0, heading))
    return out


def path_length(poses: list[Pose]) -> float:
    return float(sum(np.linalg.norm(b.translation - a.translation) for a, b in zip(poses, poses[1:])))


def densify(poses: list[Pose], step: float | None, max_turn: float = math.pi / 2) -> list[Pose]:
    """Insert intermediate poses: at most ``step`` meters or ``max_turn`` radians apart."""
    if not poses:
        return []
    out = [poses[0]]
    for a, b in zip(poses, poses[1:]):
        dist = float(np.linalg.norm(b.translation - a.translation))
        dyaw = _wrap(b.yaw() - a.yaw())
        n = 1
        if step:
            n = max(n, math.ceil(dist / step - 1e-9))
        n = max(n, math.ceil(abs(dyaw) / max_turn - 1e-9))
        for k in range(1, n + 1):
            s = k / n
            p = a.translation + s * (b.translation - a.translation)
            out.append(Pose.from_xyz_yaw(p[0], p[1], p[2], a.yaw() + s * dyaw))
    return out


def loop_trajectory(length: float, width: float, n_steps: int, step: float,
                    max_turn: float, round_trip: bool = False) -> list[Pose]:
    """Counter-clockwise laps around a rectangle, truncated to ``n_steps`` poses.

    With ``round_trip`` the robot drives half the steps along the loop, turns
    around in place and retraces its path.
    """
    corners = [(0.0, 0.0), (length, 0.0), (length, width), (0.0, width)]
    lap = _headed(corners + [corners[0], corners[1]])[:-1]
    target = n_steps
    if round_trip:
        n_turn = math.ceil(math.pi / max_turn - 1e-9)
        target = max(1, (n_steps - n_turn + 2) // 2)
    poses: list[Pose] = []
    while len(poses) < target:
        seg = densify(lap, step, max_turn)
        # consecutive laps share their start pose
        poses.extend(seg[1:] if poses else seg)
    poses = poses[:target]
    if round_trip:
        end = poses[-1]
        for k in range(1, n_turn + 1):
            poses.append(Pose.from_xyz_yaw(end.translation[0], end.translation[1], 0.0,
                                           end.yaw() + k * math.pi / n_turn))
        flip = se3.rot_z(math.pi)
        back = [Pose(p.rotation @ flip, p.translation) for p in reversed(poses[:target - 1])]
        poses.extend(back)
        poses = poses[:n_steps]
    return poses[:n_steps]


# -- generation -------------------------------------------------------------------


def _canonical_first(hyps: list[Pose]) -> list[int]:
    """Order hypotheses so the one with relative yaw in (-90, 90] comes first."""
    def key(i):
        y = hyps[i].yaw()
        return (0 if -math.pi / 2 < y <= math.pi / 2 else 1, i)
    return sorted(range(len(hyps)), key=key)


def _mug_layout(cfg: ScenarioConfig, rng: np.random.Generator) -> dict[int, Pose]:
    lo, hi = cfg.landmark_offset
    perimeter = 2.0 * (cfg.loop_length + cfg.loop_width)
    out = {}
    for j in range(cfg.n_landmarks):
        s = (j + rng.uniform(0.2, 0.8)) * perimeter / cfg.n_landmarks
        # point on the rectangle at arc length s, pushed outward or inward
        L, W = cfg.loop_length, cfg.loop_width
        if s < L:
            p, n = np.array([s, 0.0]), np.array([0.0, -1.0])
        elif s < L + W:
            p, n = np.array([L, s - L]), np.array([1.0, 0.0])
        elif s < 2 * L + W:
            p, n = np.array([L - (s - L - W), W]), np.array([0.0, 1.0])
        else:
            p, n = np.array([0.0, W - (s - 2 * L - W)]), np.array([-1.0, 0.0])
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        q = p + side * rng.uniform(lo, hi) * n
        out[j] = Pose.from_xyz_yaw(q[0], q[1], 0.0, rng.uniform(-math.pi, math.pi))
    return out


def _card_layout(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[dict[int, Pose], dict[int, str]]:
    cards = {}
    j = 0
    for r in range(cfg.rows):
        for c in range(cfg.cols):
            x = (c + 0.5) * cfg.spacing
            y = r * cfg.spacing
            cards[j] = Pose.from_xyz_yaw(x, y, 0.0, rng.uniform(-0.3, 0.3))
            j += 1
    n = len(cards)
    n_classes = max(1, min(cfg.n_classes, n))
    labels = list(range(n_classes)) + list(rng.choice(n_classes, size=n - n_classes, replace=False)
                                           if n - n_classes <= n_classes else
                                           rng.choice(n_classes, size=n - n_classes))
    labels = [labels[i] for i in rng.permutation(n)]
    return cards, {j: f"card{labels[j]}" for j in cards}


def generate(cfg: ScenarioConfig) -> tuple[GroundTruth, MeasurementLog]:
    rng = np.random.default_rng(cfg.seed)
    max_turn = math.radians(cfg.max_turn_deg)
    if cfg.kind == "cards":
        traj = lawnmower_trajectory(cfg.rows, cfg.cols + 1, cfg.spacing, cfg.step_length, max_turn)
        landmarks, classes = _card_layout(cfg, rng)
    else:
        traj = loop_trajectory(cfg.loop_length, cfg.loop_width, cfg.n_steps, cfg.step_length, max_turn,
                               cfg.round_trip)
        landmarks = _mug_layout(cfg, rng)
        classes = {j: cfg.kind.rstrip("s") or "object" for j in landmarks}
    truth = GroundTruth(traj, landmarks, classes)

    odo_cov = cfg.odometry_covariance
    meas_cov = cfg.measurement_covariance
    odo_logged = np.maximum(odo_cov, _VARIANCE_FLOOR * np.eye(6))
    meas_logged = np.maximum(meas_cov, _VARIANCE_FLOOR * np.eye(6))
    log = MeasurementLog(len(traj), traj[0], np.maximum(cfg.prior_covariance, _VARIANCE_FLOOR * np.eye(6)),
                         meta={"kind": cfg.kind, "model": cfg.model, "seed": cfg.seed,
                               "covariance_scale": cfg.covariance_scale})
    fov = math.radians(cfg.fov_half_angle_deg)
    corrections = [se3.rot_z(math.radians(a)) for a in cfg.corruption_deg]
    for t, x in enumerate(traj):
        if t > 0:
            rel = traj[t - 1].between(x)
            log.odometry.append(OdometryRecord(t, se3.perturb(rel, odo_cov, rng), odo_logged.copy()))
        visible = []
        for j, lm in landmarks.items():
            rel = x.between(lm)
            rng_ = float(np.linalg.norm(rel.translation[:2]))
            bearing = math.atan2(rel.translation[1], rel.translation[0])
            if cfg.min_range <= rng_ <= cfg.sensor_range and abs(bearing) < fov:
                visible.append((rng_, j, rel))
        visible.sort()
        if cfg.max_detections_per_step:
            visible = visible[:cfg.max_detections_per_step]
        for _, j, rel in sorted(visible, key=lambda v: v[1]):
            noisy = se3.perturb(rel, meas_cov, rng)
            hyps = [noisy]
            ambiguous = cfg.model == "central_symmetry_2"
            if cfg.model == "occlusion_3":
                lm = landmarks[j]
                sight = lm.translation - x.translation
                sight = sight / max(np.linalg.norm(sight), 1e-12)
                ambiguous = float(lm.rotation[:, 0] @ sight) > cfg.occlusion_cos
            if ambiguous:
                hyps += [Pose(noisy.rotation @ c, noisy.translation) for c in corrections]
            order = list(range(len(hyps)))
            if len(hyps) > 1:
                if cfg.hypothesis_order == "shuffle":
                    order = [int(i) for i in rng.permutation(len(hyps))]
                elif cfg.hypothesis_order == "canonical":
                    order = _canonical_first(hyps)
            hyps = [hyps[i] for i in order]
            w = 1.0 / len(hyps)
            log.landmarks.append(LandmarkRecord(t, j, classes[j], hyps, [w] * len(hyps),
                                                meas_logged.copy(), order.index(0)))
    return truth, log
