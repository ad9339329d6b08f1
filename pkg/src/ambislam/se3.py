"""SE(3) and SO(3) geometry.

Twists are ordered rotation first, ``xi = (omega, v)``. Every covariance over
twist coordinates in this package uses the same ordering.

Poses are stored as a rotation matrix and a translation. The batch helpers
(``so3_*``, ``se3_*``) operate on arrays with arbitrary leading dimensions and
are what the solvers use; :class:`Pose` and the scalar functions wrap them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# below this angle the trigonometric coefficients switch to Taylor series
SMALL_ANGLE = 1e-4
# strict log refuses rotations this close to pi
PI_AMBIGUITY_TOL = 1e-6
# the antisymmetric-part axis extraction degrades past this angle
_NEAR_PI = math.pi - 1e-2


class BranchAmbiguityError(ValueError):
    """Raised by :func:`log` when the rotation angle is too close to pi."""


def hat(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _coeffs(theta: np.ndarray):
    """sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 with series near zero."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def so3_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _ = _coeffs(theta)
    W = hat(w)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal rotation vector, robust up to and including angle pi."""
    R = np.asarray(R, dtype=float)
    axis_sin = 0.5 * vee(R - np.swapaxes(R, -1, -2))  # sin(theta) * axis
    s = np.linalg.norm(axis_sin, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < SMALL_ANGLE
    ts = np.where(small, 1.0, theta)
    scale = np.where(small, 1.0 + theta * theta / 6.0, ts / np.where(small, 1.0, np.sin(ts)))
    w = scale[..., None] * axis_sin

    near_pi = theta > _NEAR_PI
    if np.any(near_pi):
        Rn = R[near_pi]
        cn = np.cos(theta[near_pi])
        sym = 0.5 * (Rn + np.swapaxes(Rn, -1, -2)) - cn[:, None, None] * np.eye(3)
        aat = sym / (1.0 - cn)[:, None, None]
        diag = np.diagonal(aat, axis1=-2, axis2=-1)
        col = np.argmax(diag, axis=-1)
        idx = np.arange(len(col))
        axis = aat[idx, :, col] / np.sqrt(np.maximum(diag[idx, col], 1e-300))[:, None]
        sign = np.where(np.einsum("ij,ij->i", axis, axis_sin[near_pi]) < 0.0, -1.0, 1.0)
        w = np.array(w, copy=True)
        w[near_pi] = (sign * theta[near_pi])[:, None] * axis
    return w


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w, axis=-1)
    _, b, c = _coeffs(theta)
    W = hat(w)
    return np.eye(3) + b[..., None, None] * W + c[..., None, None] * (W @ W)


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    # 1/t^2 - cot(t/2)/(2t)
    k = np.where(small, 1.0 / 12.0 + theta * theta / 720.0,
                 1.0 / (t * t) - 1.0 / (2.0 * t * np.tan(0.5 * t)))
    W = hat(w)
    return np.eye(3) - 0.5 * W + k[..., None, None] * (W @ W)


def _q_block(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Off-diagonal block of the SE(3) left Jacobian."""
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    st, ct = np.sin(t), np.cos(t)
    a = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - st) / t**3)
    b = np.where(small, 1.0 / 24.0 - t2 / 720.0, (t * t + 2.0 * ct - 2.0) / (2.0 * t**4))
    c = np.where(small, 1.0 / 120.0 - t2 / 2520.0, (2.0 * t - 3.0 * st + t * ct) / (2.0 * t**5))
    P = hat(rho)
    F = hat(phi)
    FP = F @ P
    PF = P @ F
    FPF = FP @ F
    FF = F @ F
    a = a[..., None, None]
    b = b[..., None, None]
    c = c[..., None, None]
    return (0.5 * P + a * (FP + PF + FPF) + b * (FF @ P + P @ FF - 3.0 * FPF)
            + c * (FPF @ F + F @ FPF))


def se3_exp(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=float)
    w, v = xi[..., :3], xi[..., 3:]
    R = so3_exp(w)
    t = np.einsum("...ij,...j->...i", so3_left_jacobian(w), v)
    return R, t


def se3_log(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    w = so3_log(R)
    v = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(w), t)
    return np.concatenate([w, v], axis=-1)


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SE(3) in (omega, v) ordering."""
    xi = np.asarray(xi, dtype=float)
    w, v = -xi[..., :3], -xi[..., 3:]
    Jinv = so3_left_jacobian_inv(w)
    Q = _q_block(v, w)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Jinv
    out[..., 3:, 3:] = Jinv
    out[..., 3:, :3] = -Jinv @ Q @ Jinv
    return out


def se3_adjoint(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = hat(t) @ R
    return out


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of rotation matrices, in radians."""
    s = 0.5 * np.linalg.norm(vee(R - np.swapaxes(R, -1, -2)), axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float = 0.0, yaw: float = 0.0) -> Pose:
        return cls(rot_z(yaw), [x, y, z])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def between(self, other: Pose) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt @ other.rotation, Rt @ (other.translation - self.translation))

    def transform_point(self, p) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self) -> str:
        xi = so3_log(self.rotation)
        return f"Pose(rotvec={np.round(xi, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def between(a: Pose, b: Pose) -> Pose:
    """``inverse(a) * b``: the pose of ``b`` expressed in the frame of ``a``."""
    return a.between(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise ValueError(f"exp of non-finite twist {xi}")
    R, t = se3_exp(xi)
    return Pose(R, t)


def log(p: Pose) -> np.ndarray:
    """Principal twist of ``p``.

    Raises :class:`BranchAmbiguityError` within ``PI_AMBIGUITY_TOL`` of a
    half turn, where the rotation axis sign is not determined.
    """
    angle = float(rotation_angle(p.rotation))
    if angle > math.pi - PI_AMBIGUITY_TOL:
        raise BranchAmbiguityError(f"rotation angle {angle!r} is within {PI_AMBIGUITY_TOL} of pi")
    return se3_log(p.rotation, p.translation)


def retract(p: Pose, delta) -> Pose:
    """Body-frame update ``p * exp(delta)``."""
    return p.compose(exp(delta))


def angle_between(a: Pose, b: Pose) -> float:
    return float(rotation_angle(a.rotation.T @ b.rotation))


def distance(a: Pose, b: Pose, lam: float = 1.0) -> float:
    """Translation norm plus ``lam`` times the geodesic rotation angle.

    Invariant under a common left composition ``g*a, g*b``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    return float(np.linalg.norm(a.translation - b.translation)) + lam * angle_between(a, b)


def distances(Ra, ta, Rb, tb, lam: float = 1.0) -> np.ndarray:
    """Vectorized :func:`distance` over stacked rotations/translations."""
    rel = np.swapaxes(Ra, -1, -2) @ Rb
    return np.linalg.norm(ta - tb, axis=-1) + lam * rotation_angle(rel)


def sample_perturbation(cov, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian twist with covariance ``cov``.

    Positive semi-definite input is accepted (a zero matrix yields a zero
    twist); indefinite input raises ``np.linalg.LinAlgError``.
    """
    cov = np.asarray(cov, dtype=float).reshape(6, 6)
    z = rng.standard_normal(6)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if evals.min() < -1e-12 * max(1.0, abs(evals).max()):
            raise
        L = evecs * np.sqrt(np.clip(evals, 0.0, None))
    return L @ z


def perturb(p: Pose, cov, rng: np.random.Generator) -> Pose:
    """Right (body-frame) perturbation ``p * exp(noise)``."""
    return p.compose(exp(sample_perturbation(cov, rng)))


def stack(poses) -> tuple[np.ndarray, np.ndarray]:
    poses = list(poses)
    if not poses:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    return (np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]))
