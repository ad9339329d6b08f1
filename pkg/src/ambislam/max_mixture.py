"""Max-mixture landmark measurement factor.

The factor's negative log-likelihood is the minimum over components of

    0.5 * |L_i r_i|^2  - log w_i + 0.5 * log det(2 pi Sigma_i)

so the best hypothesis is re-selected every time the factor is evaluated.
The constants are shifted by their minimum over components: selection is
unchanged, the reported error stays non-negative, and a one-component factor
has exactly the error of a plain :class:`BetweenFactor`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import se3
from .factors import Factor, GaussianNoiseModel, Key, as_noise
from .se3 import Pose


@dataclass(frozen=True)
class MixtureComponent:
    measured: Pose
    noise: GaussianNoiseModel
    weight: float = 1.0

    @property
    def raw_constant(self) -> float:
        return -math.log(self.weight) + 0.5 * self.noise.log_det_2pi_cov


class MaxMixtureFactor(Factor):
    def __init__(self, robot_key: Key, landmark_key: Key, components: Sequence[MixtureComponent]):
        if len(components) < 1:
            raise ValueError("max-mixture factor needs at least one component")
        if robot_key == landmark_key:
            raise ValueError("max-mixture factor needs two distinct keys")
        weights = np.array([c.weight for c in components], dtype=float)
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ValueError("component weights must be positive")
        weights = weights / weights.sum()
        self.robot_key = robot_key
        self.landmark_key = landmark_key
        self.keys = (robot_key, landmark_key)
        self.mixture = tuple(
            MixtureComponent(c.measured, as_noise(c.noise), float(w))
            for c, w in zip(components, weights)
        )
        raw = np.array([c.raw_constant for c in self.mixture])
        self.constants = raw - raw.min()

    @classmethod
    def from_hypotheses(cls, robot_key: Key, landmark_key: Key, poses: Sequence[Pose],
                        noise, weights: Sequence[float] | None = None) -> MaxMixtureFactor:
        noise = as_noise(noise)
        if weights is None:
            weights = [1.0] * len(poses)
        return cls(robot_key, landmark_key,
                   [MixtureComponent(p, noise, w) for p, w in zip(poses, weights)])

    def __len__(self) -> int:
        return len(self.mixture)

    @property
    def hypotheses(self) -> list[Pose]:
        return [c.measured for c in self.mixture]

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.mixture])

    def best_weight_index(self) -> int:
        """Highest-weight component, lowest index on ties."""
        return int(np.argmax(self.weights))

    def components(self):
        return [(c.measured, c.noise, float(k)) for c, k in zip(self.mixture, self.constants)]

    def component_errors(self, values) -> np.ndarray:
        """Error plus constant of every component at ``values``."""
        comp, R, t = self._compile(values)
        return comp.component_costs(R, t)

    def select_component(self, values) -> int:
        comp, R, t = self._compile(values)
        _, sel = comp.evaluate(R, t)
        return int(sel[0])

    def __repr__(self):
        return f"MaxMixtureFactor({self.robot_key}, {self.landmark_key}, N={len(self)})"


def select_component(factor: MaxMixtureFactor, values) -> int:
    return factor.select_component(values)


def min_mutual_hypothesis_distance(factor: MaxMixtureFactor, lam: float = 1.0) -> float:
    if len(factor) < 2:
        raise ValueError("mutual hypothesis distance needs at least two hypotheses")
    hyps = factor.hypotheses
    return min(se3.distance(a, b, lam) for a, b in itertools.combinations(hyps, 2))
