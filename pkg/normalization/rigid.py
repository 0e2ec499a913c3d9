"""
Rigid motions (rotation + translation) of meshes and landmark sets.
"""
from dataclasses import dataclass

import numpy as np

from scans.mesh import FaceMesh, FrameTag

ORTHONORMAL_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    p' = R p + t, with R a proper rotation (RᵀR = I, det R = +1).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(rotation.T @ rotation, np.eye(3), rtol=0.0, atol=ORTHONORMAL_TOLERANCE):
            raise ValueError('rotation is not orthonormal')
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError('rotation must have determinant +1')
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_euler(cls, angles, translation=(0.0, 0.0, 0.0)):
        """Rotation Rz·Ry·Rx from angles (radians) about x, y, z."""
        ax, ay, az = angles
        cx, sx = np.cos(ax), np.sin(ax)
        cy, sy = np.cos(ay), np.sin(ay)
        cz, sz = np.cos(az), np.sin(az)
        rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        return cls(rz @ ry @ rx, translation)

    @classmethod
    def from_row_major(cls, values):
        """Build from 12 floats: the 3x4 matrix [R | t] row by row."""
        matrix = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(matrix[:, :3], matrix[:, 3])

    def as_row_major(self):
        return np.hstack([self.rotation, self.translation[:, None]]).ravel()

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_mesh(self, mesh, frame_tag=None):
        return FaceMesh(
            self.apply(mesh.vertices),
            mesh.colors,
            mesh.triangles,
            mesh.frame_tag if frame_tag is None else FrameTag(frame_tag),
        )

    def apply_landmarks(self, landmarks):
        return landmarks.map_points(self.apply)

    def compose(self, other):
        """The transform applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        return RigidTransform(self.rotation.T, -(self.rotation.T @ self.translation))
