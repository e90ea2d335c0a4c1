import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import minimize

from domefactory.geometry.skeleton import SHAPE_MAX, SHAPE_MIN, BodyParams, forward_kinematics

logger = logging.getLogger(__name__)

# keeps the fitted scales strictly inside the open interval
SHAPE_MARGIN = 1e-6


@dataclass
class BodyFitResult:
    body: BodyParams
    residual: float
    initial_residual: float
    converged: bool
    n_iterations: int
    n_valid: int = 0

    @property
    def joint_rms(self):
        return float(np.sqrt(self.residual / max(self.n_valid, 1)))


def smpl_energy(proxy, pose, shape, translation, joints, valid):
    """Sum of squared distances between posed proxy joints and target joints (valid ones only)."""
    positions, _ = forward_kinematics(proxy, pose, shape, translation)
    diff = positions[valid] - joints[valid]
    return torch.sum(diff * diff)


def wrap_rotvec(pose):
    """Equivalent axis-angle vectors with magnitude < pi."""
    pose = np.array(pose, dtype=np.float64).reshape(-1, 3)
    angle = np.linalg.norm(pose, axis=1)
    for j in np.nonzero(angle >= np.pi)[0]:
        wrapped = np.mod(angle[j] + np.pi, 2.0 * np.pi) - np.pi
        pose[j] = pose[j] / angle[j] * wrapped
        if abs(wrapped) >= np.pi:
            pose[j] *= 1.0 - 1e-12
    return pose


def fit_body_init(joints_3d, proxy, init=None, valid=None, max_iters=2000, tol=1e-15):
    """Fit BodyParams to 3D joints by minimizing the joint energy with L-BFGS-B.

    Starts from `init` (the previous frame's solution) or the rest pose. Bone
    scales are box-constrained to the proxy's admissible range. The returned
    residual is never above the starting one.
    """
    joints_3d = np.asarray(joints_3d, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(joints_3d).all(axis=1)
    valid = np.asarray(valid, dtype=bool)
    if not np.any(valid):
        raise ValueError("fit_body_init needs at least one valid joint")
    if init is None:
        init = BodyParams.rest(proxy)

    j, b = proxy.n_joints, proxy.n_bones
    target = torch.as_tensor(np.where(valid[:, None], joints_3d, 0.0), dtype=torch.float64)
    mask = torch.as_tensor(valid)

    def fun(vec):
        x = torch.tensor(vec, dtype=torch.float64, requires_grad=True)
        energy = smpl_energy(proxy, x[: 3 * j].reshape(j, 3), x[3 * j : 3 * j + b], x[3 * j + b :], target, mask)
        energy.backward()
        return float(energy.detach()), x.grad.numpy().copy()

    x0 = init.to_vector()
    x0[3 * j : 3 * j + b] = np.clip(x0[3 * j : 3 * j + b], SHAPE_MIN + SHAPE_MARGIN, SHAPE_MAX - SHAPE_MARGIN)
    e0, _ = fun(x0)
    bounds = [(None, None)] * (3 * j) + [(SHAPE_MIN + SHAPE_MARGIN, SHAPE_MAX - SHAPE_MARGIN)] * b + [(None, None)] * 3
    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iters, "ftol": tol, "gtol": 1e-12},
    )

    x, e = res.x, float(res.fun)
    if not e <= e0:
        x, e = x0, e0
    converged = bool(res.success)
    if not converged:
        logger.warning("fit_body_init stopped without converging (%s); residual %.3e", res.message, e)

    body = BodyParams(wrap_rotvec(x[: 3 * j]), x[3 * j : 3 * j + b], x[3 * j + b :])
    return BodyFitResult(
        body=body, residual=e, initial_residual=e0, converged=converged, n_iterations=int(res.nit), n_valid=int(valid.sum())
    )
