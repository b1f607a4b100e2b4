"""Disparity -> 3D points, and point-cloud normalisation for the force network.

Camera frame: right-handed, +x right, +y down (image rows), +z forward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

EXACT_DMAX_LIMIT = 4096


class DegenerateCloudError(ValueError):
    pass


@dataclass(frozen=True)
class StereoRig:
    focal_px: float
    cx: float
    cy: float
    baseline_m: float

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ValueError(f"focal_px must be > 0, got {self.focal_px}")
        if self.baseline_m <= 0:
            raise ValueError(f"baseline_m must be > 0, got {self.baseline_m}")

    @property
    def principal_point(self):
        return (self.cx, self.cy)

    def disparity_for_depth(self, z):
        return self.focal_px * self.baseline_m / np.asarray(z, dtype=float)

    def project(self, points):
        """Left-camera pixel coordinates (u, v) and disparity of 3D points."""
        p = np.asarray(points, dtype=float)
        z = p[..., 2]
        u = self.focal_px * p[..., 0] / z + self.cx
        v = self.focal_px * p[..., 1] / z + self.cy
        return u, v, self.disparity_for_depth(z)


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) metres
    pixels: np.ndarray | None = None  # (N, 2) source (u, v)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


@dataclass
class NormalizedCloud:
    points: np.ndarray
    centroid_m: np.ndarray
    scale_m: float

    def __len__(self):
        return len(self.points)


def triangulate(disparity, rig: StereoRig, mask=None):
    """Back-project valid pixels of a disparity map (or a plain 2-D array).

    Pixels with non-finite or non-positive disparity are skipped. Returns
    (cloud, n_skipped_nonpositive).
    """
    d = getattr(disparity, "disparity", disparity)
    d = np.asarray(d, dtype=float)
    ok = np.isfinite(d)
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)
    nonpos = ok & (d <= 0)
    ok &= d > 0
    v, u = np.nonzero(ok)
    dd = d[v, u]
    z = rig.focal_px * rig.baseline_m / dd
    x = (u - rig.cx) * z / rig.focal_px
    y = (v - rig.cy) * z / rig.focal_px
    cloud = PointCloud(np.column_stack([x, y, z]), np.column_stack([u, v]))
    return cloud, int(nonpos.sum())


def max_pairwise_distance(points) -> float:
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return 0.0
    if len(p) > EXACT_DMAX_LIMIT:
        # the farthest pair is always a pair of hull vertices
        try:
            p = p[ConvexHull(p).vertices]
        except QhullError:
            pass
        if len(p) > EXACT_DMAX_LIMIT:
            return _chunked_dmax(p)
    return float(pdist(p).max())


def _chunked_dmax(p, chunk=1024):
    best = 0.0
    for i in range(0, len(p), chunk):
        a = p[i : i + chunk]
        d2 = ((a[:, None, :] - p[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def normalize_cloud(cloud, weights=None) -> NormalizedCloud:
    """Translate the weighted centroid to the origin, divide by the max pairwise distance."""
    p = getattr(cloud, "points", cloud)
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    if len(p) < 2:
        raise DegenerateCloudError(f"need at least 2 points, got {len(p)}")
    if weights is None:
        centroid = p.mean(axis=0)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(p),) or w.sum() <= 0:
            raise ValueError("weights must be one positive-sum value per point")
        centroid = (w[:, None] * p).sum(axis=0) / w.sum()
    dmax = max_pairwise_distance(p)
    if dmax == 0.0:
        raise DegenerateCloudError("all points coincide")
    return NormalizedCloud((p - centroid) / dmax, centroid, dmax)


def sample_points(cloud, n_points: int, seed) -> PointCloud:
    """Exactly n_points points: without replacement if the cloud is big enough."""
    if n_points <= 0:
        raise ValueError(f"n_points must be positive, got {n_points}")
    p = np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise DegenerateCloudError("cannot sample from an empty cloud")
    rng = np.random.default_rng(seed)
    if len(p) >= n_points:
        idx = rng.choice(len(p), size=n_points, replace=False)
    else:
        idx = rng.choice(len(p), size=n_points, replace=True)
    pixels = getattr(cloud, "pixels", None)
    return PointCloud(p[idx], None if pixels is None else pixels[idx])


def write_ply(path, points, comment="slforce point cloud v1"):
    """ASCII PLY with float x y z vertices in metres."""
    p = np.asarray(getattr(points, "points", points), dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"comment {comment}\n")
        f.write(f"element vertex {len(p)}\n")
        f.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        np.savetxt(f, p, fmt="%.9g")


def read_ply(path) -> PointCloud:
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n = None
        props = []
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY supported")
            if tok[0] == "element" and tok[1] == "vertex":
                n = int(tok[2])
            elif tok[0] == "property" and n is not None:
                props.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if n is None:
            raise ValueError(f"{path}: no vertex element")
        data = np.loadtxt(f, ndmin=2, max_rows=n) if n else np.zeros((0, len(props)))
    cols = [props.index(c) for c in ("x", "y", "z")]
    return PointCloud(data[:, cols])
