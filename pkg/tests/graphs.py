"""Random SLAM problems shared by solver tests."""

import numpy as np

from ambislam import se3
from ambislam.factors import BetweenFactor, GaussianNoiseModel, L, PriorFactor, X
from ambislam.se3 import Pose

ODO = GaussianNoiseModel.from_sigmas([0.02] * 3 + [0.05] * 3)
LMK = GaussianNoiseModel.from_sigmas([0.05] * 3 + [0.1] * 3)
PRIOR = GaussianNoiseModel.from_sigmas([1e-3] * 6)


def random_graph_stream(rng, max_poses=100, max_landmarks=10):
    """Per-step ``(factors, new_values)`` batches of a noisy landmark SLAM run.

    New variables start at dead reckoning / first sighting, so replaying the
    stream through a batch solver uses the same initialization.
    """
    n = int(rng.integers(10, max_poses + 1))
    n_l = int(rng.integers(1, max_landmarks + 1))
    truth = [Pose.identity()]
    for _ in range(1, n):
        step = se3.exp(np.concatenate([rng.normal(0, 0.1, 3), [1.0, 0, 0] + rng.normal(0, 0.2, 3)]))
        truth.append(truth[-1].compose(step))
    landmarks = [truth[int(rng.integers(n))].compose(se3.exp(rng.normal(0, [0.3] * 3 + [2] * 3)))
                 for _ in range(n_l)]
    est = Pose.identity()
    seen = set()
    yield [PriorFactor(X(0), Pose.identity(), PRIOR)], {X(0): Pose.identity()}
    for t in range(n):
        factors, values = [], {}
        if t:
            odo = se3.perturb(truth[t - 1].between(truth[t]), ODO.covariance, rng)
            est = est.compose(odo)
            factors.append(BetweenFactor(X(t - 1), X(t), odo, ODO))
            values[X(t)] = est
        for j, lm in enumerate(landmarks):
            if np.linalg.norm(lm.translation - truth[t].translation) > 6 and rng.random() > 0.05:
                continue
            z = se3.perturb(truth[t].between(lm), LMK.covariance, rng)
            factors.append(BetweenFactor(X(t), L(j), z, LMK))
            if j not in seen:
                seen.add(j)
                values[L(j)] = est.compose(z)
        if factors:
            yield factors, values
