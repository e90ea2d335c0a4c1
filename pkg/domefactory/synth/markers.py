import logging

import numpy as np

from domefactory.geometry.registration import MarkerSet

logger = logging.getLogger(__name__)

MIN_MARKERS = 4


def attach_markers(template, k=6, seed=0):
    """Pick `k` template vertices by farthest-point sampling.

    The start vertex is drawn from `seed`; every following marker is the vertex
    farthest from the ones already chosen (lowest index on ties). Marker ids are
    the template vertex indices, so a marker always lies exactly on the surface.
    """
    if k < MIN_MARKERS:
        raise ValueError("need at least " + str(MIN_MARKERS) + " markers, got k=" + str(k))
    vertices = np.asarray(template.vertices, dtype=np.float64)
    if k > len(vertices):
        raise ValueError(
            "cannot attach k=" + str(k) + " markers to a template with " + str(len(vertices)) + " vertices"
        )

    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(vertices)))]
    dist = np.linalg.norm(vertices - vertices[chosen[0]], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(vertices - vertices[nxt], axis=1))

    ids = np.array(chosen, dtype=np.int64)
    logger.debug("attached %d markers at template vertices %s", k, ids.tolist())
    return MarkerSet(vertices[ids], ids)


def observe_markers(markers, pose, noise_sigma=0.0, seed=0):
    """World-frame marker observation: pose applied, then i.i.d. Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0, got " + str(noise_sigma))
    positions = pose.apply(markers.positions)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        positions = positions + rng.normal(scale=noise_sigma, size=positions.shape)
    return MarkerSet(positions, markers.ids)
