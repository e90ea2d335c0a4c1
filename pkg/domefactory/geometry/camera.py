from dataclasses import dataclass

import numpy as np

from domefactory.geometry.rigid import RigidPose


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. `pose` maps world to camera coordinates (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    pose: RigidPose
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0, got fx=" + str(self.fx) + ", fy=" + str(self.fy))
        if self.width < 1 or self.height < 1:
            raise ValueError(
                "resolution must be at least 1x1, got " + str(self.width) + "x" + str(self.height)
            )

    @classmethod
    def look_at(cls, eye, target, fx, fy, width, height, up=(0.0, 1.0, 0.0), cx=None, cy=None):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward], axis=0)
        pose = RigidPose(rotation, -rotation @ eye)
        return cls(
            fx=float(fx),
            fy=float(fy),
            cx=float(width) / 2.0 if cx is None else float(cx),
            cy=float(height) / 2.0 if cy is None else float(cy),
            pose=pose,
            width=int(width),
            height=int(height),
        )

    @property
    def intrinsics(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def projection_matrix(self):
        return self.intrinsics @ self.pose.as_matrix()[:3, :]

    @property
    def center(self):
        return -self.pose.rotation.T @ self.pose.translation

    def scaled(self, width, height):
        """Same camera resampled to a different pixel grid."""
        sx = float(width) / self.width
        sy = float(height) / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, self.pose, int(width), int(height))

    def project(self, points):
        """Project world points to continuous pixel coordinates; returns (uv, depth)."""
        cam = self.pose.apply(points)
        depth = cam[..., 2]
        uv = np.stack(
            [self.fx * cam[..., 0] / depth + self.cx, self.fy * cam[..., 1] / depth + self.cy], axis=-1
        )
        return uv, depth

    def pixel_rays(self):
        """Origins and unit directions of the rays through all pixel centers, row-major (H*W, 3)."""
        v, u = np.meshgrid(np.arange(self.height) + 0.5, np.arange(self.width) + 0.5, indexing="ij")
        cam_dirs = np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1
        ).reshape(-1, 3)
        dirs = cam_dirs @ self.pose.rotation
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(self.center, dirs.shape).copy()
        return origins, dirs

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": self.pose.rotation.tolist(),
            "translation": self.pose.translation.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fx=d["fx"],
            fy=d["fy"],
            cx=d["cx"],
            cy=d["cy"],
            pose=RigidPose(d["rotation"], d["translation"]),
            width=d["width"],
            height=d["height"],
        )
