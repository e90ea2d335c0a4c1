import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from domefactory.geometry.rigid import RigidPose, orthonormalize
from domefactory.geometry.skeleton import SHAPE_MAX, SHAPE_MIN, BodyParams, axis_angle_to_matrix
from domefactory.tracking.body_fit import SHAPE_MARGIN, fit_body_init, wrap_rotvec
from domefactory.tracking.contact import ContactMap, compute_contact_map
from domefactory.tracking.energy import (
    EnergyContext,
    body_surface_points,
    energy_terms,
    weighted_total,
)

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
GRAD_TOL = 1e-10


@dataclass
class JointOptimizationResult:
    body: BodyParams
    object_pose: RigidPose
    contact: ContactMap
    trace: pd.DataFrame
    converged: bool

    @property
    def energy(self):
        return float(self.trace["total"].iloc[-1])


class _State:
    """Optimization variables: body vectors plus the object pose as R = exp(w) R0, T."""

    def __init__(self, body, obj):
        self.pose = np.array(body.pose)
        self.shape = np.array(body.shape)
        self.translation = np.array(body.translation)
        self.rotation = np.array(obj.rotation)
        self.obj_translation = np.array(obj.translation)

    def copy(self):
        out = _State.__new__(_State)
        out.pose = self.pose.copy()
        out.shape = self.shape.copy()
        out.translation = self.translation.copy()
        out.rotation = self.rotation.copy()
        out.obj_translation = self.obj_translation.copy()
        return out

    def body(self):
        return BodyParams(self.pose, self.shape, self.translation)

    def object_pose(self):
        return RigidPose(orthonormalize(self.rotation), self.obj_translation)


def _evaluate(ctx, state, contact, block=None):
    """Energy (and gradient w.r.t. `block` variables when given) at `state`."""
    t = lambda a, grad=False: torch.tensor(a, dtype=ctx.dtype, requires_grad=grad)
    body_grad = block == "body"
    obj_grad = block == "object"
    pose = t(state.pose, body_grad)
    shape = t(state.shape, body_grad)
    translation = t(state.translation, body_grad)
    omega = t(np.zeros(3), obj_grad)
    obj_t = t(state.obj_translation, obj_grad)
    rotation = axis_angle_to_matrix(omega) @ t(state.rotation)

    if block is None:
        with torch.no_grad():
            terms = energy_terms(ctx, pose, shape, translation, rotation, obj_t, contact)
            return float(weighted_total(ctx, terms)), terms, None

    terms = energy_terms(ctx, pose, shape, translation, rotation, obj_t, contact)
    total = weighted_total(ctx, terms)
    variables = (pose, shape, translation) if body_grad else (omega, obj_t)
    grads = torch.autograd.grad(total, variables, allow_unused=True)
    grads = [np.zeros(v.shape) if g is None else g.detach().numpy() for v, g in zip(variables, grads)]
    return float(total.detach()), {k: v.detach() for k, v in terms.items()}, grads


def _step(state, block, direction, alpha):
    new = state.copy()
    if block == "body":
        new.pose = state.pose + alpha * direction[0]
        new.shape = np.clip(state.shape + alpha * direction[1], SHAPE_MIN + SHAPE_MARGIN, SHAPE_MAX - SHAPE_MARGIN)
        new.translation = state.translation + alpha * direction[2]
    else:
        with torch.no_grad():
            delta = axis_angle_to_matrix(torch.as_tensor(alpha * direction[0], dtype=torch.float64)).numpy()
        new.rotation = delta @ state.rotation
        new.obj_translation = state.obj_translation + alpha * direction[1]
    return new


def _line_search(ctx, state, contact, block, energy, grads, precond, alpha0, min_step):
    """Backtracking on -precond * grad; returns (state, energy, terms, alpha) or None."""
    direction = [-p * g for p, g in zip(precond, grads)]
    slope = float(sum(np.sum(g * d) for g, d in zip(grads, direction)))
    if not slope < 0:
        return None
    alpha = alpha0
    while alpha >= min_step:
        trial = _step(state, block, direction, alpha)
        e_trial, terms, _ = _evaluate(ctx, trial, contact)
        if np.isfinite(e_trial) and e_trial <= energy + ARMIJO_C * alpha * slope and e_trial <= energy:
            return trial, e_trial, terms, alpha
        alpha *= 0.5
    return None


def _trace_row(iteration, block, alpha, energy, terms, contact, segment=0, refresh=False):
    row = {
        "iteration": iteration,
        "block": block,
        "step": alpha,
        "total": energy,
        "n_contacts": len(contact),
        "segment": segment,
        "refresh": refresh,
    }
    row.update({k: float(v) for k, v in terms.items()})
    return row


def joint_optimize(init_body, init_obj, frame, cfg, contact=None, ctx=None):
    """Block-coordinate descent on the tracking energy with Armijo backtracking.

    Alternates a body step (pose, shape, translation) and an object step
    (rotation update exp(w) R, translation). The contact map is refreshed every
    `contact_refresh` iterations from the current state and always adopted. A
    refresh that changes the map starts a new trace segment (`segment` column,
    `refresh` row); inside a segment the recorded energy never increases.
    """
    if ctx is None:
        ctx = EnergyContext(frame, cfg)
    weights = ctx.weights
    threshold = float(cfg["contact_threshold"])
    if threshold <= 0:
        raise ValueError("contact_threshold must be > 0, got " + str(threshold))

    if all(w == 0 for w in weights.values()):
        # object terms vanish: plain joint fit for the body, object left as initialized
        fit = fit_body_init(frame.joints_3d, frame.proxy, init=init_body, valid=frame.joints_valid, max_iters=cfg["fit_max_iters"])
        contact = ContactMap.empty(threshold)
        state = _State(fit.body, init_obj)
        energy, terms, _ = _evaluate(ctx, state, contact)
        trace = pd.DataFrame([_trace_row(0, "fit", 0.0, energy, terms, contact)])
        return JointOptimizationResult(fit.body, init_obj, contact, trace, fit.converged)

    state = _State(init_body, init_obj)
    if contact is None:
        contact = _contact_at(ctx, state, threshold) if weights["lambda_contact"] > 0 else ContactMap.empty(threshold)
    energy, terms, _ = _evaluate(ctx, state, contact)
    rows = [_trace_row(0, "init", 0.0, energy, terms, contact)]

    vertices = frame.template.vertices
    scale2 = float(np.mean(np.sum((vertices - vertices.mean(axis=0)) ** 2, axis=1))) + 1e-12
    precond = {"body": (1.0, 1.0, 1.0), "object": (1.0 / scale2, 1.0)}
    alpha = {"body": 1.0, "object": 1.0}
    min_step = float(cfg["min_step"])
    refresh = int(cfg["contact_refresh"])
    converged = False
    segment = 0

    for it in range(1, int(cfg["max_iters"]) + 1):
        if weights["lambda_contact"] > 0 and refresh > 0 and it % refresh == 0:
            candidate = _contact_at(ctx, state, threshold)
            if not np.array_equal(candidate.pairs, contact.pairs):
                contact = candidate
                energy, terms, _ = _evaluate(ctx, state, contact)
                segment += 1
                rows.append(_trace_row(it, "contact", 0.0, energy, terms, contact, segment, True))

        e_start = energy
        grad_norm = 0.0
        moved = False
        for block in ("body", "object"):
            _, _, grads = _evaluate(ctx, state, contact, block)
            grad_norm = max(grad_norm, float(np.sqrt(sum(np.sum(g * g) for g in grads))))
            found = _line_search(ctx, state, contact, block, energy, grads, precond[block], 2.0 * alpha[block], min_step)
            if found is None:
                continue
            state, energy, terms, alpha[block] = found
            moved = True
            rows.append(_trace_row(it, block, alpha[block], energy, terms, contact, segment))

        if not moved:
            converged = grad_norm < GRAD_TOL
            if not converged:
                logger.warning(
                    "frame %d: line search failed at minimum step (|grad| = %.3e); stopping", frame.frame, grad_norm
                )
            break
        if e_start - energy <= float(cfg["tol"]) * max(1.0, abs(e_start)):
            converged = True
            break
    else:
        logger.warning("frame %d: joint optimization hit max_iters=%d", frame.frame, cfg["max_iters"])

    body = BodyParams(wrap_rotvec(state.pose), state.shape, state.translation)
    return JointOptimizationResult(body, state.object_pose(), contact, pd.DataFrame(rows), converged)


def _contact_at(ctx, state, threshold):
    body_points = body_surface_points(ctx, state.body())
    posed = state.object_pose().apply(ctx.frame.template.vertices)
    return compute_contact_map(body_points, posed, threshold)
