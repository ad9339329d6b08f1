import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import logm

from ambislam import se3
from ambislam.factors import BetweenFactor, GaussianNoiseModel, Key, L, PriorFactor, X
from ambislam.max_mixture import MaxMixtureFactor
from ambislam.se3 import Pose

from .conftest import random_pose


def random_noise(rng) -> GaussianNoiseModel:
    A = rng.normal(0, 0.3, (6, 6))
    return GaussianNoiseModel(A @ A.T + 0.05 * np.eye(6))


def numeric_jacobian(factor, values, key, h=1e-6):
    """Central differences of the whitened residual under right retraction."""
    J = np.zeros((6, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        plus = dict(values)
        minus = dict(values)
        plus[key] = se3.retract(values[key], d)
        minus[key] = se3.retract(values[key], -d)
        J[:, k] = (factor.linearize(plus)[1] - factor.linearize(minus)[1]) / (2 * h)
    return J


def check_jacobians(factor, values):
    blocks, _ = factor.linearize(values)
    for key, J in blocks.items():
        assert np.abs(J - numeric_jacobian(factor, values, key)).max() < 1e-5


def test_key_parse_and_format():
    assert str(X(12)) == "x12" and Key.parse("l3") == L(3)
    assert L(0).is_landmark and not X(0).is_landmark
    for bad in ("y1", "x", "l-1", "x1.5"):
        with pytest.raises(ValueError):
            Key.parse(bad)


def test_noise_model_whitening(rng):
    n = random_noise(rng)
    np.testing.assert_allclose(n.sqrt_information.T @ n.sqrt_information,
                               np.linalg.inv(n.covariance), rtol=1e-9, atol=1e-9)
    assert np.allclose(np.triu(n.sqrt_information), n.sqrt_information)
    np.testing.assert_allclose(n.information @ n.covariance, np.eye(6), atol=1e-9)
    m = GaussianNoiseModel.from_information(n.information)
    np.testing.assert_allclose(m.covariance, n.covariance, rtol=1e-9, atol=1e-12)


def test_noise_model_rejects_bad_covariance():
    with pytest.raises(ValueError):
        GaussianNoiseModel(-np.eye(6))
    bad = np.eye(6)
    bad[0, 1] = 0.5
    with pytest.raises(ValueError):
        GaussianNoiseModel(bad)


def test_between_residual_matches_matrix_log(rng):
    for _ in range(20):
        a, b, z = random_pose(rng), random_pose(rng), random_pose(rng)
        f = BetweenFactor(X(0), X(1), z, np.eye(6))
        _, e = f.linearize({X(0): a, X(1): b})
        M = logm(np.linalg.inv(z.matrix()) @ np.linalg.inv(a.matrix()) @ b.matrix()).real
        if se3.rotation_angle(z.between(a.between(b)).rotation) > 3.0:
            continue
        np.testing.assert_allclose(e[:3], se3.vee(M[:3, :3]), atol=1e-8)
        np.testing.assert_allclose(e[3:], M[:3, 3], atol=1e-8)


def test_between_error_value():
    # identity measurement, B one meter ahead of A, unit covariance
    f = BetweenFactor(X(0), X(1), Pose.identity(), np.eye(6))
    assert f.error({X(0): Pose.identity(), X(1): Pose.from_xyz_yaw(1, 0, 0, 0)}) == pytest.approx(0.5)


def _near(base, rng, spread=0.3):
    return base.compose(se3.exp(rng.normal(0, spread, 6)))


def test_prior_jacobians_200(rng):
    for _ in range(200):
        z = random_pose(rng)
        f = PriorFactor(X(0), z, random_noise(rng))
        check_jacobians(f, {X(0): _near(z, rng)})


def test_between_jacobians_200(rng):
    for _ in range(200):
        a, z = random_pose(rng), random_pose(rng)
        f = BetweenFactor(X(0), L(0), z, random_noise(rng))
        check_jacobians(f, {X(0): a, L(0): _near(a.compose(z), rng)})


def test_max_mixture_jacobians_200(rng):
    done = 0
    while done < 200:
        a = random_pose(rng)
        hyps = [random_pose(rng) for _ in range(int(rng.integers(2, 5)))]
        f = MaxMixtureFactor.from_hypotheses(X(0), L(0), hyps, random_noise(rng),
                                             rng.uniform(0.2, 1.0, len(hyps)))
        vals = {X(0): a, L(0): _near(a.compose(hyps[0]), rng)}
        costs = np.sort(f.component_errors(vals))
        if costs[1] - costs[0] < 1e-2:
            continue  # too close to a selection boundary for finite differences
        check_jacobians(f, vals)
        done += 1


@given(st.integers(0, 2 ** 32 - 1))
def test_between_error_invariant_under_common_motion(seed):
    rng = np.random.default_rng(seed)
    a, b, z, g = (random_pose(rng) for _ in range(4))
    f = BetweenFactor(X(0), X(1), z, np.eye(6) * 0.3)
    e1 = f.error({X(0): a, X(1): b})
    e2 = f.error({X(0): g.compose(a), X(1): g.compose(b)})
    assert e2 == pytest.approx(e1, rel=1e-7, abs=1e-9)


def test_between_rejects_self_loop():
    with pytest.raises(ValueError):
        BetweenFactor(X(0), X(0), Pose.identity(), np.eye(6))


def test_missing_value_raises():
    f = BetweenFactor(X(0), X(1), Pose.identity(), np.eye(6))
    with pytest.raises(KeyError):
        f.error({X(0): Pose.identity()})


def test_error_is_half_squared_mahalanobis(rng):
    a, z = random_pose(rng), random_pose(rng)
    b = _near(a.compose(z), rng, 0.2)
    n = random_noise(rng)
    f = BetweenFactor(X(0), X(1), z, n)
    r = se3.log(z.between(a.between(b)))
    assert f.error({X(0): a, X(1): b}) == pytest.approx(0.5 * r @ n.information @ r, rel=1e-9)
    assert math.isfinite(f.error({X(0): a, X(1): b}))
