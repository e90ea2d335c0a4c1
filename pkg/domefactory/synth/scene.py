"""Deterministic synthetic multi-view capture of one person handling one rigid object.

Everything is ray cast on the host: capsules for the body proxy, the posed
template mesh for the object. Masks are full silhouettes (occluded parts of an
entity still count), the visible-entity map records which layer is in front.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from domefactory.geometry.camera import Camera
from domefactory.geometry.mesh import TriMesh, load_obj, make_box, make_icosphere, make_tetrahedron, save_obj
from domefactory.geometry.rays import ray_mesh_first_hit_batch
from domefactory.geometry.registration import MarkerSet
from domefactory.geometry.rigid import RigidPose
from domefactory.geometry.skeleton import (
    BodyParams,
    BodyProxy,
    capsule_normals,
    posed_joints,
    ray_capsule_intersect,
)
from domefactory.synth.markers import attach_markers, observe_markers
from domefactory.utils import io_funs
from domefactory.utils.util_funs import config_hash, read_json, try_gen_folder, write_json

logger = logging.getLogger(__name__)

HUMAN = 0
OBJECT = 1
BACKGROUND = -1

SCENE_MANIFEST = "scene_manifest.json"


@dataclass
class SceneSpec:
    n_cameras: int = 12
    ring_radius: float = 3.0
    ring_height: float = 1.3
    ring_start_angle: float = 0.0
    look_at: tuple = (0.0, 1.15, 0.0)
    fov_degrees: float = 40.0
    width: int = 96
    height: int = 96
    n_frames: int = 5
    template: str = "box"
    template_size: tuple = (0.3, 0.2, 0.2)
    template_subdivisions: int = 2
    n_markers: int = 6
    marker_noise: float = 0.0
    light_direction: tuple = (0.3, 0.8, 0.5)
    ambient: float = 0.3
    motion_amplitude: float = 1.0
    body_motion: list = None
    object_motion: list = None
    seed: int = 0
    proxy: BodyProxy = field(default_factory=BodyProxy)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_cameras < 2:
            raise ValueError("n_cameras must be >= 2, got " + str(self.n_cameras))
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1, got " + str(self.n_frames))
        if self.width < 1 or self.height < 1:
            raise ValueError("image resolution must be at least 1x1")
        if not (0.0 < self.fov_degrees < 180.0):
            raise ValueError("fov_degrees must lie in (0, 180), got " + str(self.fov_degrees))
        if self.marker_noise < 0:
            raise ValueError("marker_noise must be >= 0")
        for name, script in (("body_motion", self.body_motion), ("object_motion", self.object_motion)):
            if script is not None and len(script) != self.n_frames:
                raise ValueError(name + " must have one entry per frame (" + str(self.n_frames) + ")")
        return self

    @classmethod
    def from_config(cls, scene_config, proxy=None):
        kwargs = dict(scene_config)
        if proxy is not None:
            kwargs["proxy"] = proxy
        return cls(**kwargs)

    def to_dict(self):
        d = asdict(self)
        d["proxy"] = self.proxy.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["proxy"] = BodyProxy.from_dict(d["proxy"])
        return cls(**d)


@dataclass
class FrameTruth:
    """Ground truth for one frame. View-indexed arrays have the camera index first."""

    frame: int
    images: np.ndarray
    human_masks: np.ndarray
    object_masks: np.ndarray
    union_masks: np.ndarray
    visible: np.ndarray
    human_layers: np.ndarray
    object_layers: np.ndarray
    object_pose: RigidPose
    body: BodyParams
    markers: MarkerSet
    joints_3d: np.ndarray
    joints_2d: np.ndarray
    joints_visible: np.ndarray

    @property
    def n_views(self):
        return len(self.images)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    cameras: list
    template: TriMesh
    template_markers: MarkerSet
    frames: list

    @property
    def proxy(self):
        return self.spec.proxy

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, index):
        return self.frames[index]


def build_cameras(spec):
    """Cameras on a horizontal ring, all looking at `spec.look_at`."""
    focal = 0.5 * spec.width / np.tan(0.5 * np.deg2rad(spec.fov_degrees))
    cameras = []
    for k in range(spec.n_cameras):
        angle = spec.ring_start_angle + 2.0 * np.pi * k / spec.n_cameras
        eye = np.array([spec.ring_radius * np.sin(angle), spec.ring_height, spec.ring_radius * np.cos(angle)])
        cameras.append(Camera.look_at(eye, spec.look_at, focal, focal, spec.width, spec.height))
    return cameras


def build_template(spec):
    """Colored, watertight object template in its canonical frame."""
    if spec.template == "box":
        mesh = make_box(spec.template_size, spec.template_subdivisions)
    elif spec.template == "icosphere":
        mesh = make_icosphere(0.5 * float(np.max(spec.template_size)), spec.template_subdivisions)
    elif spec.template == "tetrahedron":
        mesh = make_tetrahedron(0.5 * float(np.max(spec.template_size)))
    elif os.path.exists(spec.template):
        mesh = load_obj(spec.template)
    else:
        raise ValueError("unknown template: " + str(spec.template))
    mesh.require_watertight("object template")
    if mesh.colors is not None:
        return mesh

    rng = np.random.default_rng(spec.seed)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    freq = np.array([[9.0, 4.0, 2.0], [3.0, 11.0, 5.0], [5.0, 2.0, 13.0]])
    colors = 0.5 + 0.35 * np.sin(mesh.vertices @ freq.T + phase)
    return TriMesh(mesh.vertices, mesh.triangles, colors)


def scripted_bodies(spec):
    """Per-frame BodyParams: the body motion script if given, otherwise a procedural reach."""
    proxy = spec.proxy
    rng = np.random.default_rng([spec.seed, 1])
    default_shape = 1.0 + 0.05 * rng.uniform(-1.0, 1.0, size=proxy.n_bones)
    bodies = []
    for f in range(spec.n_frames):
        if spec.body_motion is not None:
            entry = spec.body_motion[f]
            if not isinstance(entry, dict):
                entry = {"pose": entry}
            body = BodyParams(
                entry["pose"],
                entry.get("shape", np.ones(proxy.n_bones)),
                entry.get("translation", np.zeros(3)),
            )
        else:
            body = _procedural_body(proxy, f, spec.n_frames, spec.motion_amplitude, default_shape)
        bodies.append(body.validate(proxy))
    return bodies


def _procedural_body(proxy, f, n_frames, amplitude, shape):
    s = f / max(n_frames - 1, 1)
    a = amplitude
    pose = np.zeros((proxy.n_joints, 3))
    if proxy.n_joints == 8:
        pose[0] = [0.0, 0.3 * a * s, 0.0]
        pose[1] = [0.1 * a * s, 0.0, 0.0]
        pose[3] = [0.0, -0.2 * a * s, 0.0]
        pose[4] = [0.0, 0.0, -0.9 * a + 0.2 * a * s]
        pose[5] = [0.0, 0.4 * a * s, 0.0]
        pose[6] = [0.0, 0.3 * a * s, 0.25 * a]
        pose[7] = [0.0, 0.0, -0.25 * a * s]
    translation = np.array([0.1 * a * s, 0.0, 0.05 * a * s])
    return BodyParams(pose, shape, translation)


def scripted_object_poses(spec, bodies, template):
    """Per-frame object poses: the object motion script if given, otherwise hanging below the last joint."""
    poses = []
    half_height = 0.5 * float(template.bounds[1][1] - template.bounds[0][1])
    for f in range(spec.n_frames):
        if spec.object_motion is not None:
            entry = spec.object_motion[f]
            poses.append(RigidPose.from_rotvec(entry["rotvec"], entry["translation"]).validate())
            continue
        s = f / max(spec.n_frames - 1, 1)
        joints, _ = posed_joints(spec.proxy, bodies[f])
        radius = spec.proxy.radii[-1]
        center = joints[-1] - np.array([0.0, radius + 0.98 * half_height, 0.0])
        rotvec = spec.motion_amplitude * np.array([0.15 * s, 0.5 * s, 0.0])
        poses.append(RigidPose.from_rotvec(rotvec, center))
    return poses


def _shade(normals, view_dirs, light, ambient):
    # two-sided Lambert: normals are flipped to face the viewer
    facing = np.sign(np.sum(normals * -view_dirs, axis=1, keepdims=True))
    facing[facing == 0] = 1.0
    lambert = np.clip(np.sum(normals * facing * light, axis=1, keepdims=True), 0.0, 1.0)
    return ambient + (1.0 - ambient) * lambert


def render_truth_view(camera, proxy, body, posed_template, light_direction, ambient):
    """Ray cast one view. Returns a dict of per-pixel arrays at the camera resolution."""
    h, w = camera.height, camera.width
    origins, dirs = camera.pixel_rays()
    light = np.asarray(light_direction, dtype=np.float64)
    light = light / np.linalg.norm(light)

    joints, _ = posed_joints(proxy, body)
    a = joints[proxy.bone_parent_joint]
    b = joints[proxy.bone_child_joint]
    bone_depths = np.stack(
        [ray_capsule_intersect(origins, dirs, a[k], b[k], proxy.radii[k]) for k in range(proxy.n_bones)]
    )
    bone = np.argmin(bone_depths, axis=0)
    human_depth = bone_depths[bone, np.arange(len(origins))]
    human_hit = np.isfinite(human_depth)

    human_color = np.zeros((len(origins), 3))
    if np.any(human_hit):
        idx = np.nonzero(human_hit)[0]
        points = origins[idx] + human_depth[idx, None] * dirs[idx]
        normals = np.zeros((len(idx), 3))
        for k in np.unique(bone[idx]):
            sel = bone[idx] == k
            normals[sel] = capsule_normals(points[sel], a[k], b[k])
        human_color[idx] = proxy.bone_colors[bone[idx]] * _shade(normals, dirs[idx], light, ambient)

    object_depth, tri, bu, bv = ray_mesh_first_hit_batch(origins, dirs, posed_template)
    object_hit = tri >= 0
    object_color = np.zeros((len(origins), 3))
    if np.any(object_hit):
        idx = np.nonzero(object_hit)[0]
        albedo = posed_template.interpolate_colors(tri[idx], bu[idx], bv[idx])
        normals = posed_template.face_normals[tri[idx]]
        object_color[idx] = albedo * _shade(normals, dirs[idx], light, ambient)

    # depth ties go to the human layer
    human_front = human_hit & (human_depth <= object_depth)
    visible = np.full(len(origins), BACKGROUND, dtype=np.int8)
    visible[object_hit] = OBJECT
    visible[human_front] = HUMAN
    image = np.where((visible == HUMAN)[:, None], human_color, np.where((visible == OBJECT)[:, None], object_color, 0.0))

    return {
        "image": image.reshape(h, w, 3),
        "human_mask": human_hit.reshape(h, w),
        "object_mask": object_hit.reshape(h, w),
        "union_mask": (human_hit | object_hit).reshape(h, w),
        "visible": visible.reshape(h, w),
        "human_layer": human_color.reshape(h, w, 3),
        "object_layer": object_color.reshape(h, w, 3),
    }


def _render_frame(args):
    f, spec, cameras, template, template_markers, body, pose = args
    posed = template.transformed(pose)
    views = [render_truth_view(cam, spec.proxy, body, posed, spec.light_direction, spec.ambient) for cam in cameras]
    joints_3d, _ = posed_joints(spec.proxy, body)
    joints_2d, visible = [], []
    for cam in cameras:
        uv, depth = cam.project(joints_3d)
        joints_2d.append(uv)
        visible.append(depth > 0)
    markers = observe_markers(template_markers, pose, spec.marker_noise, seed=[spec.seed, 2, f])

    def stack(key):
        return np.stack([v[key] for v in views])

    return FrameTruth(
        frame=f,
        images=stack("image"),
        human_masks=stack("human_mask"),
        object_masks=stack("object_mask"),
        union_masks=stack("union_mask"),
        visible=stack("visible"),
        human_layers=stack("human_layer"),
        object_layers=stack("object_layer"),
        object_pose=pose,
        body=body,
        markers=markers,
        joints_3d=joints_3d,
        joints_2d=np.stack(joints_2d),
        joints_visible=np.stack(visible),
    )


def generate_scene(spec, workers=1, verbose=1):
    """Render every frame of `spec`. Output depends only on the spec (seed included)."""
    spec.validate()
    cameras = build_cameras(spec)
    template = build_template(spec)
    template_markers = attach_markers(template, spec.n_markers, seed=spec.seed)
    bodies = scripted_bodies(spec)
    poses = scripted_object_poses(spec, bodies, template)
    jobs = [(f, spec, cameras, template, template_markers, bodies[f], poses[f]) for f in range(spec.n_frames)]

    logger.info(
        "Synthesizing %d frames x %d views at %dx%d", spec.n_frames, spec.n_cameras, spec.width, spec.height
    )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map keeps submission order, so the result does not depend on scheduling
            frames = list(tqdm(pool.map(_render_frame, jobs), total=len(jobs), disable=verbose == 0))
    else:
        frames = [_render_frame(job) for job in tqdm(jobs, disable=verbose == 0)]
    return SyntheticScene(spec=spec, cameras=cameras, template=template, template_markers=template_markers, frames=frames)


def _frame_name(f):
    return "frame_%04d" % f


def _view_name(f, v):
    return "frame_%04d_view_%02d" % (f, v)


def save_scene(scene, out_dir, png_copies=False, allow_abs_path_folder_generation=True):
    """Write the scene under `out_dir`/{images,masks,poses,assets} plus a JSON manifest."""
    for sub in ("images", "masks", "poses", "assets"):
        try_gen_folder(os.path.join(out_dir, sub), allow_abs_path_folder_generation)

    save_obj(os.path.join(out_dir, "assets", "template.obj"), scene.template)
    scene.template_markers.to_csv(os.path.join(out_dir, "assets", "template_markers.csv"))
    manifest = {
        "spec": scene.spec.to_dict(),
        "config_hash": config_hash(scene.spec.to_dict()),
        "cameras": [cam.to_dict() for cam in scene.cameras],
        "template": "assets/template.obj",
        "template_markers": "assets/template_markers.csv",
        "frames": [],
    }
    for truth in scene.frames:
        f = truth.frame
        entry = {
            "frame": f,
            "object_pose": "poses/object_gt_%04d.csv" % f,
            "body": "poses/body_gt_%04d.csv" % f,
            "joints_3d": "poses/joints_gt_%04d.csv" % f,
            "joints_2d": "poses/joints2d_gt_%04d.csv" % f,
            "markers": "poses/markers_%04d.csv" % f,
            "views": [],
        }
        io_funs.pose_to_frame(truth.object_pose.rotation, truth.object_pose.translation).to_csv(
            os.path.join(out_dir, entry["object_pose"]), index=False
        )
        io_funs.body_to_frame(truth.body.pose, truth.body.shape, truth.body.translation).to_csv(
            os.path.join(out_dir, entry["body"]), index=False
        )
        io_funs.points_to_frame(truth.joints_3d, names=scene.proxy.joint_names).to_csv(
            os.path.join(out_dir, entry["joints_3d"]), index=False
        )
        rows = []
        for v in range(truth.n_views):
            df = io_funs.points_to_frame(truth.joints_2d[v], valid=truth.joints_visible[v])
            df.insert(0, "view", v)
            rows.append(df)
        pd.concat(rows, ignore_index=True).to_csv(os.path.join(out_dir, entry["joints_2d"]), index=False)
        truth.markers.to_csv(os.path.join(out_dir, entry["markers"]))

        for v in range(truth.n_views):
            name = _view_name(f, v)
            view = {
                "view": v,
                "image": "images/" + name + ".ppm",
                "human_layer": "images/" + name + "_gt_human.ppm",
                "object_layer": "images/" + name + "_gt_object.ppm",
                "human_mask": "masks/" + name + "_human.pgm",
                "object_mask": "masks/" + name + "_object.pgm",
                "union_mask": "masks/" + name + "_union.pgm",
                "visible": "masks/" + name + "_visible.pgm",
            }
            io_funs.write_ppm(os.path.join(out_dir, view["image"]), truth.images[v], png_copy=png_copies)
            io_funs.write_ppm(os.path.join(out_dir, view["human_layer"]), truth.human_layers[v])
            io_funs.write_ppm(os.path.join(out_dir, view["object_layer"]), truth.object_layers[v])
            io_funs.write_pgm(os.path.join(out_dir, view["human_mask"]), truth.human_masks[v])
            io_funs.write_pgm(os.path.join(out_dir, view["object_mask"]), truth.object_masks[v])
            io_funs.write_pgm(os.path.join(out_dir, view["union_mask"]), truth.union_masks[v])
            io_funs.write_entity_map(os.path.join(out_dir, view["visible"]), truth.visible[v])
            entry["views"].append(view)
        manifest["frames"].append(entry)

    path = os.path.join(out_dir, SCENE_MANIFEST)
    write_json(path, manifest)
    logger.info("Saved scene manifest to %s", path)
    return path


def load_scene(out_dir):
    """Read a scene written by `save_scene`. Images come back quantized to 8 bits."""
    manifest = read_json(os.path.join(out_dir, SCENE_MANIFEST))
    spec = SceneSpec.from_dict(manifest["spec"])
    cameras = [Camera.from_dict(d) for d in manifest["cameras"]]
    template = load_obj(os.path.join(out_dir, manifest["template"]))
    template_markers = MarkerSet.from_csv(os.path.join(out_dir, manifest["template_markers"]))

    def path(rel):
        return os.path.join(out_dir, rel)

    frames = []
    for entry in manifest["frames"]:
        rotation, translation = io_funs.frame_to_pose(pd.read_csv(path(entry["object_pose"])))
        pose, shape, gamma = io_funs.frame_to_body(pd.read_csv(path(entry["body"])))
        joints_3d = pd.read_csv(path(entry["joints_3d"]))[["x", "y", "z"]].to_numpy()
        j2d = pd.read_csv(path(entry["joints_2d"]))
        n_views = len(entry["views"])
        joints_2d = j2d[["u", "v"]].to_numpy().reshape(n_views, -1, 2)
        joints_visible = j2d["valid"].to_numpy(dtype=bool).reshape(n_views, -1)
        views = entry["views"]
        frames.append(
            FrameTruth(
                frame=entry["frame"],
                images=np.stack([io_funs.read_ppm(path(v["image"])) for v in views]),
                human_masks=np.stack([io_funs.read_pgm(path(v["human_mask"])) for v in views]),
                object_masks=np.stack([io_funs.read_pgm(path(v["object_mask"])) for v in views]),
                union_masks=np.stack([io_funs.read_pgm(path(v["union_mask"])) for v in views]),
                visible=np.stack([io_funs.read_entity_map(path(v["visible"])) for v in views]),
                human_layers=np.stack([io_funs.read_ppm(path(v["human_layer"])) for v in views]),
                object_layers=np.stack([io_funs.read_ppm(path(v["object_layer"])) for v in views]),
                object_pose=RigidPose(rotation, translation),
                body=BodyParams(pose, shape, gamma),
                markers=MarkerSet.from_csv(path(entry["markers"])),
                joints_3d=joints_3d,
                joints_2d=joints_2d,
                joints_visible=joints_visible,
            )
        )
    return SyntheticScene(spec=spec, cameras=cameras, template=template, template_markers=template_markers, frames=frames)
