import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambislam.association import AssociationConfig, associate, match_distance
from ambislam.factors import L
from ambislam.se3 import Pose
from ambislam.simulator import LandmarkRecord

NN = AssociationConfig(mode="nearest_neighbor", gate=1.0)
ROBOT = Pose.from_xyz_yaw(0.0, 0.0, 0.0, 0.0)


def record(hyps, label="card1", landmark=7):
    return LandmarkRecord(0, landmark, label, list(hyps), [1.0] * len(hyps), np.eye(6))


def symmetric(x, y):
    return [Pose.from_xyz_yaw(x, y, 0, 0), Pose.from_xyz_yaw(x, y, 0, math.pi)]


def test_oracle_returns_logged_id():
    assert associate(record(symmetric(1, 0)), ROBOT, {}, {}, AssociationConfig()) == L(7)
    mapped = {L(0): Pose.from_xyz_yaw(1, 0)}
    assert associate(record(symmetric(1, 0)), ROBOT, mapped, {L(0): "card1"}, AssociationConfig()) == L(7)


def test_single_landmark_within_gate():
    mapped = {L(3): Pose.from_xyz_yaw(1.1, 0, 0, 0)}
    assert associate(record(symmetric(1, 0)), ROBOT, mapped, {L(3): "card1"}, NN) == L(3)


def test_nearer_of_two_candidates_wins_and_rule_is_symmetric():
    hyps = symmetric(1, 0)
    a, b = Pose.from_xyz_yaw(1.3, 0, 0, 0), Pose.from_xyz_yaw(1.0, 0.31, 0, math.pi)
    classes = {L(0): "card1", L(1): "card1"}
    assert associate(record(hyps), ROBOT, {L(0): a, L(1): b}, classes, NN) == L(0)
    assert associate(record(hyps), ROBOT, {L(0): b, L(1): a}, classes, NN) == L(1)


def test_exact_tie_goes_to_lowest_index():
    p = Pose.from_xyz_yaw(1.2, 0, 0, 0)
    classes = {L(4): "card1", L(2): "card1"}
    assert associate(record(symmetric(1, 0)), ROBOT, {L(4): p, L(2): p}, classes, NN) == L(2)


def test_class_gating():
    mapped = {L(0): Pose.from_xyz_yaw(1, 0)}
    assert associate(record(symmetric(1, 0)), ROBOT, mapped, {L(0): "card2"}, NN) is None
    ungated = AssociationConfig(mode="nearest_neighbor", class_gating=False)
    assert associate(record(symmetric(1, 0)), ROBOT, mapped, {L(0): "card2"}, ungated) == L(0)


def test_gate_limits():
    mapped = {L(0): Pose.from_xyz_yaw(1.5, 0)}
    classes = {L(0): "card1"}
    assert associate(record(symmetric(1, 0)), ROBOT, mapped, classes,
                     AssociationConfig(mode="nearest_neighbor", gate=1e-9)) is None
    assert associate(record(symmetric(1, 0)), ROBOT, mapped, classes,
                     AssociationConfig(mode="nearest_neighbor", gate=math.inf)) == L(0)


def test_config_validation():
    with pytest.raises(ValueError):
        AssociationConfig(mode="jcbb")
    with pytest.raises(ValueError):
        AssociationConfig(gate=0.0)


def test_distance_uses_world_frame_hypotheses():
    robot = Pose.from_xyz_yaw(2, 0, 0, math.pi / 2)
    rec = record([Pose.from_xyz_yaw(1, 0, 0, 0)])
    assert match_distance(robot, rec, Pose.from_xyz_yaw(2, 1, 0, math.pi / 2)) == pytest.approx(0, abs=1e-12)


@given(st.permutations(range(3)), st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3))
def test_distance_invariant_to_hypothesis_order(perm, x, y, yaw):
    hyps = [Pose.from_xyz_yaw(1, 0, 0, 0), Pose.from_xyz_yaw(1, 0, 0, 0.5), Pose.from_xyz_yaw(1, 0, 0, -0.5)]
    lm = Pose.from_xyz_yaw(x, y, 0, yaw)
    d1 = match_distance(ROBOT, record(hyps), lm)
    d2 = match_distance(ROBOT, record([hyps[i] for i in perm]), lm)
    assert d1 == d2
