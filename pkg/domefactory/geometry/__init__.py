from .rigid import RigidPose, random_pose, orthonormalize
from .camera import Camera
from .mesh import (
    TriMesh,
    make_box,
    make_icosphere,
    make_tetrahedron,
    subdivide,
    with_colors,
    load_obj,
    save_obj,
)
from .rays import (
    Ray,
    ray_aabb_intersect,
    ray_aabb_intersect_batch,
    ray_mesh_first_hit,
    ray_mesh_first_hit_batch,
    point_inside_mesh,
    points_inside_mesh,
)
from .registration import (
    MarkerSet,
    RegistrationResult,
    rigid_fit_points,
    umeyama_rigid_fit,
    icp_rigid,
)
from .skeleton import BodyProxy, BodyParams, forward_kinematics, human_bounds, bone_transforms
