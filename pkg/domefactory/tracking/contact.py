import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ContactMap:
    """Active (body surface point index, object vertex index) pairs, sorted lexicographically."""

    pairs: np.ndarray
    threshold: float

    def __post_init__(self):
        pairs = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.threshold <= 0:
            raise ValueError("contact threshold must be > 0, got " + str(self.threshold))
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def empty(cls, threshold):
        return cls(np.zeros((0, 2), dtype=np.int64), threshold)

    def __len__(self):
        return len(self.pairs)

    @property
    def is_empty(self):
        return len(self.pairs) == 0

    @property
    def body_indices(self):
        return self.pairs[:, 0]

    @property
    def object_indices(self):
        return self.pairs[:, 1]

    def to_frame(self):
        return pd.DataFrame({"body_point": self.pairs[:, 0], "object_vertex": self.pairs[:, 1]})

    def to_csv(self, path):
        df = self.to_frame()
        df["threshold"] = self.threshold
        df.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path, threshold=None):
        df = pd.read_csv(path)
        if threshold is None:
            threshold = float(df["threshold"].iloc[0]) if len(df) else 0.02
        return cls(df[["body_point", "object_vertex"]].to_numpy(dtype=np.int64), threshold)


def compute_contact_map(body_points, object_vertices, threshold):
    """All body/object pairs with point-to-vertex distance <= threshold.

    `object_vertices` may be a posed TriMesh or an (M, 3) array.
    """
    if threshold <= 0:
        raise ValueError("contact threshold must be > 0, got " + str(threshold))
    object_vertices = np.asarray(getattr(object_vertices, "vertices", object_vertices), dtype=np.float64)
    body_points = np.asarray(body_points, dtype=np.float64)
    if len(body_points) == 0 or len(object_vertices) == 0:
        return ContactMap.empty(threshold)

    tree = cKDTree(object_vertices)
    # slightly widened ball, then the exact test decides
    candidates = tree.query_ball_point(body_points, r=threshold * (1.0 + 1e-9))
    pairs = []
    for i, hits in enumerate(candidates):
        for k in hits:
            if np.linalg.norm(body_points[i] - object_vertices[k]) <= threshold:
                pairs.append((i, k))
    pairs = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    logger.debug("contact map: %d pairs within %.3g", len(pairs), threshold)
    return ContactMap(pairs, threshold)
