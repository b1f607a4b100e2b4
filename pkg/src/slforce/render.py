"""Ray caster for rectified stereo views of a triangle mesh lit by a pattern projector.

Both cameras share intrinsics and orientation (identity rotation); the right
camera sits at +baseline along x. Pixel (u, v) is centred at integer
coordinates, so its ray direction is ((u - cx) / f, (v - cy) / f, 1) and the
hit distance along that ray equals the depth z.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class Projector:
    """Pinhole projector. `rotation` maps world directions into projector axes."""

    position: np.ndarray
    rotation: np.ndarray
    focal_px: float
    cx: float
    cy: float

    @classmethod
    def looking_forward(cls, position, tilt_deg, fov_deg, width, height):
        """Projector whose optical axis is +z tilted down (toward +y) by `tilt_deg`."""
        a = np.deg2rad(tilt_deg)
        # world -> projector: rotate about x so the tilted axis becomes +z
        rot = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(a), -np.sin(a)], [0.0, np.sin(a), np.cos(a)]])
        f = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
        return cls(np.asarray(position, float), rot, f, 0.5 * (width - 1), 0.5 * (height - 1))

    def project(self, points):
        q = (np.asarray(points, float) - self.position) @ self.rotation.T
        z = q[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.focal_px * q[..., 0] / z + self.cx
            v = self.focal_px * q[..., 1] / z + self.cy
        return u, v, z


@numba.njit(cache=True)
def _cast(verts, tris, origin, f, cx, cy, width, height, depth, tri_id):
    for ti in range(tris.shape[0]):
        a = verts[tris[ti, 0]] - origin
        b = verts[tris[ti, 1]] - origin
        c = verts[tris[ti, 2]] - origin
        if a[2] <= 1e-9 or b[2] <= 1e-9 or c[2] <= 1e-9:
            continue
        ua = f * a[0] / a[2] + cx
        ub = f * b[0] / b[2] + cx
        uc = f * c[0] / c[2] + cx
        va = f * a[1] / a[2] + cy
        vb = f * b[1] / b[2] + cy
        vc = f * c[1] / c[2] + cy
        u0 = max(int(np.floor(min(ua, min(ub, uc)))), 0)
        u1 = min(int(np.ceil(max(ua, max(ub, uc)))), width - 1)
        v0 = max(int(np.floor(min(va, min(vb, vc)))), 0)
        v1 = min(int(np.ceil(max(va, max(vb, vc)))), height - 1)
        if u0 > u1 or v0 > v1:
            continue
        e1 = b - a
        e2 = c - a
        for v in range(v0, v1 + 1):
            dy = (v - cy) / f
            for u in range(u0, u1 + 1):
                dx = (u - cx) / f
                # Moller-Trumbore with ray origin 0 and direction (dx, dy, 1)
                px = dy * e2[2] - e2[1]
                py = e2[0] - dx * e2[2]
                pz = dx * e2[1] - dy * e2[0]
                det = e1[0] * px + e1[1] * py + e1[2] * pz
                if abs(det) < 1e-18:
                    continue
                inv = 1.0 / det
                tx, ty, tz = -a[0], -a[1], -a[2]
                s = (tx * px + ty * py + tz * pz) * inv
                if s < 0.0 or s > 1.0:
                    continue
                qx = ty * e1[2] - tz * e1[1]
                qy = tz * e1[0] - tx * e1[2]
                qz = tx * e1[1] - ty * e1[0]
                r = (dx * qx + dy * qy + qz) * inv
                w = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
                if r < 0.0 or s + r > 1.0 or w <= 0.0:
                    continue
                if w < depth[v, u]:
                    depth[v, u] = w
                    tri_id[v, u] = ti


def cast_depth(verts, tris, origin, focal_px, cx, cy, width, height):
    """Per-pixel depth (inf on miss) and hit triangle index (-1 on miss)."""
    depth = np.full((height, width), np.inf)
    tri_id = np.full((height, width), -1, dtype=np.int64)
    _cast(
        np.ascontiguousarray(verts, dtype=float),
        np.ascontiguousarray(tris, dtype=np.int64),
        np.asarray(origin, dtype=float),
        float(focal_px),
        float(cx),
        float(cy),
        int(width),
        int(height),
        depth,
        tri_id,
    )
    return depth, tri_id


def hit_points(depth, origin, focal_px, cx, cy):
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(float)
    z = depth
    pts = np.stack([(u - cx) / focal_px * z, (v - cy) / focal_px * z, z], axis=-1)
    return pts + np.asarray(origin, float)


def shade(points, hit, albedo, projector: Projector, texture):
    """albedo * projected texel (nearest); black where missed or outside the projector frustum.

    `texture` is an (Hp, Wp, 3) image, or None for uniform white projection.
    """
    h, w = hit.shape
    out = np.zeros((h, w, 3))
    if not hit.any():
        return out
    p = points[hit]
    u, v, z = projector.project(p)
    hp, wp = int(round(2 * projector.cy + 1)), int(round(2 * projector.cx + 1))
    ui = np.rint(u)
    vi = np.rint(v)
    inside = (z > 0) & (ui >= 0) & (ui < wp) & (vi >= 0) & (vi < hp)
    col = np.zeros((len(p), 3))
    if texture is None:
        col[inside] = 1.0
    else:
        col[inside] = texture[vi[inside].astype(int), ui[inside].astype(int)]
    alb = np.asarray(albedo, float)
    if alb.ndim == 1:
        col *= alb
    else:
        col *= alb[hit]
    out[hit] = col
    return out
