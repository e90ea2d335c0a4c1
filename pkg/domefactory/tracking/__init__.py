from .triangulation import TriangulationResult, triangulate_joints
from .body_fit import BodyFitResult, fit_body_init, smpl_energy
from .contact import ContactMap, compute_contact_map
from .energy import EnergyBreakdown, EnergyContext, TrackingFrame, energy_total, energy_terms, soft_silhouette
from .optimize import JointOptimizationResult, joint_optimize
from .sequence import TrackedFrame, track_sequence, save_tracking, load_tracking
