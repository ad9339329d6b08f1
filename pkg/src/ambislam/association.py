"""Measurement-to-landmark data association: logged ids or nearest neighbor."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import se3
from .factors import Key
from .se3 import Pose
from .simulator import LandmarkRecord

MODES = ("oracle", "nearest_neighbor")


@dataclass
class AssociationConfig:
    mode: str = "oracle"
    gate: float = 1.0
    lam: float = 1.0
    class_gating: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown association mode {self.mode!r}")
        if not self.gate > 0:
            raise ValueError("gate must be positive")


def match_distance(robot: Pose, record: LandmarkRecord, landmark: Pose, lam: float = 1.0) -> float:
    """Smallest distance between ``landmark`` and any world-frame hypothesis."""
    R, t = se3.stack(robot.compose(h) for h in record.hypotheses)
    d = se3.distances(landmark.rotation[None], landmark.translation[None], R, t, lam)
    return float(np.min(d))


def associate(record: LandmarkRecord, robot: Pose, landmarks: Mapping[Key, Pose],
              classes: Mapping[Key, str], cfg: AssociationConfig) -> Key | None:
    """Key of the matched landmark, or ``None`` to start a new one.

    In oracle mode the logged id is returned even if the landmark is not
    mapped yet; the caller decides whether that means a new variable.
    """
    if cfg.mode == "oracle":
        return Key("l", record.landmark)
    best, best_d = None, math.inf
    for key in sorted(landmarks, key=lambda k: k.index):
        if cfg.class_gating and classes.get(key) != record.label:
            continue
        d = match_distance(robot, record, landmarks[key], cfg.lam)
        if d < best_d:
            best, best_d = key, d
    return best if best_d < cfg.gate else None
