from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class RigidPose:
    """SE(3) transform x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix(), translation)

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self):
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def as_rotvec(self):
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def is_valid(self, tol=ORTHONORMAL_TOL):
        gram = self.rotation.T @ self.rotation
        return bool(
            np.all(np.abs(gram - np.eye(3)) <= tol)
            and abs(np.linalg.det(self.rotation) - 1.0) <= tol
        )

    def validate(self, tol=ORTHONORMAL_TOL):
        if not self.is_valid(tol):
            raise ValueError("rotation is not a proper orthonormal matrix (tol=" + str(tol) + ")")
        return self

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_direction(self, directions):
        return np.asarray(directions, dtype=np.float64) @ self.rotation.T

    def inverse(self):
        rot_t = self.rotation.T
        return RigidPose(rot_t, -rot_t @ self.translation)

    def compose(self, other):
        """self after other: x -> self(other(x))."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other):
        return self.compose(other)


def random_pose(rng, max_translation=1.0):
    rotation = Rotation.random(random_state=rng).as_matrix()
    translation = rng.uniform(-max_translation, max_translation, size=3)
    return RigidPose(rotation, translation)


def orthonormalize(rotation):
    """Closest proper rotation to `rotation` in the Frobenius sense."""
    u, _, vt = np.linalg.svd(rotation)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt
