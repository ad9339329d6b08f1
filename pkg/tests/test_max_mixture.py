import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambislam import se3
from ambislam.factors import BetweenFactor, GaussianNoiseModel, L, X
from ambislam.max_mixture import (MaxMixtureFactor, MixtureComponent,
                                  min_mutual_hypothesis_distance)
from ambislam.se3 import Pose

from .conftest import random_pose


def random_mixture(rng, n=None):
    n = n or int(rng.integers(1, 5))
    comps = []
    for _ in range(n):
        sig = rng.uniform(0.05, 1.0, 6)
        comps.append(MixtureComponent(random_pose(rng), GaussianNoiseModel.from_sigmas(sig),
                                      rng.uniform(0.1, 1.0)))
    return MaxMixtureFactor(X(0), L(0), comps)


def brute_force(f: MaxMixtureFactor, values) -> float:
    """Minimum over components, each scored as its own plain factor."""
    w = f.weights
    raw = [-math.log(wi) + 0.5 * c.noise.log_det_2pi_cov for wi, c in zip(w, f.mixture)]
    shift = min(raw)
    return min(BetweenFactor(X(0), L(0), c.measured, c.noise).error(values) + k - shift
               for c, k in zip(f.mixture, raw))


def test_error_is_min_over_components_1000(rng):
    worst = 0.0
    for _ in range(1000):
        f = random_mixture(rng)
        vals = {X(0): random_pose(rng), L(0): random_pose(rng)}
        worst = max(worst, abs(f.error(vals) - brute_force(f, vals)))
    assert worst < 1e-12


def test_single_component_matches_gaussian_factor(rng):
    for _ in range(200):
        z, n = random_pose(rng), GaussianNoiseModel.from_sigmas(rng.uniform(0.05, 1, 6))
        mm = MaxMixtureFactor.from_hypotheses(X(0), L(0), [z], n)
        plain = BetweenFactor(X(0), L(0), z, n)
        vals = {X(0): random_pose(rng), L(0): random_pose(rng)}
        assert abs(mm.error(vals) - plain.error(vals)) < 1e-12
        np.testing.assert_array_equal(mm.linearize(vals)[1], plain.linearize(vals)[1])


def test_constants_are_shifted_to_zero_minimum(rng):
    f = random_mixture(rng, 4)
    assert min(f.constants) == 0.0
    assert np.all(np.asarray(f.constants) >= 0)
    assert f.weights.sum() == pytest.approx(1.0)


def test_selection_picks_matching_hypothesis():
    noise = GaussianNoiseModel.from_sigmas([0.1] * 6)
    hyps = [Pose.from_xyz_yaw(1, 0, 0, 0), Pose.from_xyz_yaw(1, 0, 0, math.pi / 2)]
    f = MaxMixtureFactor.from_hypotheses(X(0), L(0), hyps, noise)
    vals = {X(0): Pose.identity(), L(0): hyps[1]}
    assert f.select_component(vals) == 1
    assert f.error(vals) == pytest.approx(0.0, abs=1e-20)


def test_ties_select_lowest_index():
    noise = GaussianNoiseModel.from_sigmas([0.1] * 6)
    z = Pose.from_xyz_yaw(1, 0, 0, 0)
    f = MaxMixtureFactor.from_hypotheses(X(0), L(0), [z, z, z], noise)
    assert f.select_component({X(0): Pose.identity(), L(0): Pose.from_xyz_yaw(3, 1, 0, 0.4)}) == 0


def test_weight_shifts_selection_at_equal_residuals():
    noise = GaussianNoiseModel.from_sigmas([0.1] * 6)
    hyps = [Pose.from_xyz_yaw(1, 0.1, 0, 0), Pose.from_xyz_yaw(1, -0.1, 0, 0)]
    vals = {X(0): Pose.identity(), L(0): Pose.from_xyz_yaw(1, 0, 0, 0)}
    assert MaxMixtureFactor.from_hypotheses(X(0), L(0), hyps, noise, [0.3, 0.7]).select_component(vals) == 1
    assert MaxMixtureFactor.from_hypotheses(X(0), L(0), hyps, noise, [0.7, 0.3]).select_component(vals) == 0


def test_invalid_mixtures():
    noise = np.eye(6)
    with pytest.raises(ValueError):
        MaxMixtureFactor(X(0), L(0), [])
    with pytest.raises(ValueError):
        MaxMixtureFactor.from_hypotheses(X(0), L(0), [Pose.identity()], noise, [0.0])
    with pytest.raises(ValueError):
        MaxMixtureFactor.from_hypotheses(X(0), X(0), [Pose.identity()], noise)


def test_best_weight_index_ties_low():
    f = MaxMixtureFactor.from_hypotheses(X(0), L(0), [Pose.identity()] * 3, np.eye(6), [1, 2, 2])
    assert f.best_weight_index() == 1


@given(st.integers(0, 2 ** 32 - 1))
def test_error_never_exceeds_any_component(seed):
    rng = np.random.default_rng(seed)
    f = random_mixture(rng)
    vals = {X(0): random_pose(rng), L(0): random_pose(rng)}
    costs = f.component_errors(vals)
    assert f.error(vals) == costs.min()
    assert costs[f.select_component(vals)] == costs.min()


def test_mutual_hypothesis_distance():
    hyps = [Pose.from_xyz_yaw(0, 0, 0, 0), Pose.from_xyz_yaw(0, 0, 0, math.pi / 6),
            Pose.from_xyz_yaw(2, 0, 0, 0)]
    f = MaxMixtureFactor.from_hypotheses(X(0), L(0), hyps, np.eye(6))
    assert min_mutual_hypothesis_distance(f, 1.0) == pytest.approx(math.pi / 6)
    assert min_mutual_hypothesis_distance(f, 20.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        min_mutual_hypothesis_distance(MaxMixtureFactor.from_hypotheses(X(0), L(0), hyps[:1], np.eye(6)))


def test_linearization_uses_selected_component(rng):
    f = random_mixture(rng, 3)
    a = random_pose(rng)
    vals = {X(0): a, L(0): a.compose(f.hypotheses[2]).compose(se3.exp(rng.normal(0, 1e-3, 6)))}
    k = f.select_component(vals)
    c = f.mixture[k]
    plain = BetweenFactor(X(0), L(0), c.measured, c.noise)
    np.testing.assert_allclose(f.linearize(vals)[1], plain.linearize(vals)[1], atol=0)
