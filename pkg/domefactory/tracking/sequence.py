"""Frame-by-frame tracking of a whole capture, with CSV persistence."""

import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

from domefactory.geometry.registration import icp_rigid, umeyama_rigid_fit
from domefactory.geometry.rigid import RigidPose
from domefactory.geometry.skeleton import BodyParams
from domefactory.tracking.body_fit import fit_body_init
from domefactory.tracking.contact import ContactMap
from domefactory.tracking.energy import EnergyContext, TrackingFrame
from domefactory.tracking.optimize import joint_optimize
from domefactory.tracking.triangulation import triangulate_joints
from domefactory.utils import io_funs
from domefactory.utils.util_funs import try_gen_folder

logger = logging.getLogger(__name__)


@dataclass
class TrackedFrame:
    frame: int
    body: BodyParams
    object_pose: RigidPose
    contact: ContactMap
    trace: pd.DataFrame
    converged: bool
    triangulation_rms: float = float("nan")
    body_fit_residual: float = float("nan")
    icp_rms: float = float("nan")


def tracking_frame(truth, scene, cfg):
    """Observations for one frame: triangulated joints, markers and union masks."""
    joints_2d = truth.joints_2d
    if cfg.get("pixel_noise", 0.0) > 0:
        rng = np.random.default_rng([scene.spec.seed, 3, truth.frame])
        joints_2d = joints_2d + rng.normal(scale=cfg["pixel_noise"], size=joints_2d.shape)
    tri = triangulate_joints(joints_2d, scene.cameras, truth.joints_visible)
    frame = TrackingFrame.from_truth(truth, scene, joints_3d=tri.joints, joints_valid=tri.valid)
    return frame, tri


def init_object_pose(template_markers, observed, cfg, init=None):
    """Rigid ICP of the template markers onto the observed markers.

    Without an initial guess the id-matched closed-form fit seeds ICP.
    """
    if init is None:
        init = umeyama_rigid_fit(template_markers, observed).pose
    result = icp_rigid(
        template_markers.positions,
        observed.positions,
        init=init,
        max_iters=cfg["icp_max_iters"],
        tol=cfg["icp_tol"],
    )
    return result


def track_sequence(scene, cfg, object_inits=None, verbose=1):
    """Track every frame in order; frame t starts from frame t-1's solution.

    `object_inits` optionally gives a per-frame initial object pose for ICP.
    """
    results = []
    prev_body = None
    prev_obj = None
    for truth in tqdm(scene.frames, disable=verbose == 0):
        frame, tri = tracking_frame(truth, scene, cfg)
        fit = fit_body_init(
            frame.joints_3d, scene.proxy, init=prev_body, valid=frame.joints_valid, max_iters=cfg["fit_max_iters"]
        )
        init = object_inits[truth.frame] if object_inits is not None else prev_obj
        icp = init_object_pose(scene.template_markers, frame.markers, cfg, init=init)
        ctx = EnergyContext(frame, cfg)
        opt = joint_optimize(fit.body, icp.pose, frame, cfg, ctx=ctx)
        logger.info(
            "frame %d: energy %.4e, %d contacts, converged=%s",
            truth.frame,
            opt.energy,
            len(opt.contact),
            opt.converged,
        )
        results.append(
            TrackedFrame(
                frame=truth.frame,
                body=opt.body,
                object_pose=opt.object_pose,
                contact=opt.contact,
                trace=opt.trace,
                converged=opt.converged,
                triangulation_rms=tri.rms,
                body_fit_residual=fit.residual,
                icp_rms=icp.rms,
            )
        )
        prev_body, prev_obj = opt.body, opt.object_pose
    return results


def save_tracking(results, out_dir, allow_abs_path_folder_generation=True):
    """One CSV per frame for body, object pose, contact map and energy trace under out_dir/poses."""
    folder = os.path.join(out_dir, "poses")
    try_gen_folder(folder, allow_abs_path_folder_generation)
    files = []
    summary = []
    for r in results:
        entry = {
            "frame": r.frame,
            "body": "poses/body_%04d.csv" % r.frame,
            "object_pose": "poses/object_%04d.csv" % r.frame,
            "contact": "poses/contact_%04d.csv" % r.frame,
            "trace": "poses/energy_%04d.csv" % r.frame,
        }
        io_funs.body_to_frame(r.body.pose, r.body.shape, r.body.translation).to_csv(
            os.path.join(out_dir, entry["body"]), index=False
        )
        io_funs.pose_to_frame(r.object_pose.rotation, r.object_pose.translation).to_csv(
            os.path.join(out_dir, entry["object_pose"]), index=False
        )
        r.contact.to_csv(os.path.join(out_dir, entry["contact"]))
        r.trace.to_csv(os.path.join(out_dir, entry["trace"]), index=False)
        files.append(entry)
        summary.append(
            {
                "frame": r.frame,
                "converged": r.converged,
                "energy": float(r.trace["total"].iloc[-1]),
                "n_contacts": len(r.contact),
                "triangulation_rms": r.triangulation_rms,
                "body_fit_residual": r.body_fit_residual,
                "icp_rms": r.icp_rms,
            }
        )
    pd.DataFrame(summary).to_csv(os.path.join(folder, "tracking_summary.csv"), index=False)
    return files


def load_tracking(out_dir, files):
    summary = pd.read_csv(os.path.join(out_dir, "poses", "tracking_summary.csv")).set_index("frame")
    results = []
    for entry in files:
        pose, shape, translation = io_funs.frame_to_body(pd.read_csv(os.path.join(out_dir, entry["body"])))
        rotation, t = io_funs.frame_to_pose(pd.read_csv(os.path.join(out_dir, entry["object_pose"])))
        results.append(
            TrackedFrame(
                frame=entry["frame"],
                body=BodyParams(pose, shape, translation),
                object_pose=RigidPose(rotation, t),
                contact=ContactMap.from_csv(os.path.join(out_dir, entry["contact"])),
                trace=pd.read_csv(os.path.join(out_dir, entry["trace"])),
                converged=bool(summary.loc[entry["frame"], "converged"]),
                triangulation_rms=float(summary.loc[entry["frame"], "triangulation_rms"]),
                body_fit_residual=float(summary.loc[entry["frame"], "body_fit_residual"]),
                icp_rms=float(summary.loc[entry["frame"], "icp_rms"]),
            )
        )
    return results
