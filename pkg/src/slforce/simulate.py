"""Synthetic traction experiments: a stretched silicone tube seen by a rectified
stereo pair under the fringe projector, paired with lumped Kelvin-Voigt forces."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import constitutive as cm
from . import geometry as geo
from . import pattern as pat
from . import render
from . import stereo

log = logging.getLogger(__name__)

MANIFEST_FIELDS = (
    "sample_id",
    "cloud_path",
    "force_newtons",
    "material_id",
    "t_s",
    "pull_id",
    "phase",
    "density",
    "flagged",
)


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def volume(self) -> float:
        """Enclosed volume via the divergence theorem (faces wound outward)."""
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


@dataclass
class TubeModel:
    """Half-cylinder (axis on a support plane, curved side toward the camera), closed
    by a flat base and two half-disc end caps. Pose: fixed end at `anchor`, axis
    along `axis`, curved side bulging along `up`."""

    rest_length_m: float = 0.06
    radius_m: float = 0.008
    anchor: tuple = (-0.055, 0.0, 0.16)
    axis: tuple = (1.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, -1.0)
    albedo: tuple = (0.85, 0.6, 0.55)
    rings: int = 48
    segments: int = 24

    def __post_init__(self):
        if self.rest_length_m <= 0 or self.radius_m <= 0:
            raise ValueError("tube dimensions must be positive")
        if self.rings < 1 or self.segments < 2:
            raise ValueError("need rings >= 1 and segments >= 2")

    def frame(self):
        a = np.asarray(self.axis, float)
        a = a / np.linalg.norm(a)
        u = np.asarray(self.up, float)
        u = u - a * (u @ a)
        u = u / np.linalg.norm(u)
        s = np.cross(u, a)
        return np.column_stack([a, s, u])  # local (axial, side, up) -> world


def tube_local_mesh(tube: TubeModel):
    """Rest-shape vertices in local (axial, side, up) coordinates and outward-wound faces."""
    L, r = tube.rest_length_m, tube.radius_m
    nr, ns = tube.rings, tube.segments
    t = np.linspace(0.0, L, nr + 1)
    phi = np.linspace(0.0, np.pi, ns + 1)
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    verts = np.stack([tt, r * np.cos(pp), r * np.sin(pp)], axis=-1).reshape(-1, 3)

    def vid(i, j):
        return i * (ns + 1) + j

    tris = []
    for i in range(nr):
        for j in range(ns):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris += [(a, d, c), (a, c, b)]
        # flat base between the phi = 0 and phi = pi edges
        a, b = vid(i, 0), vid(i + 1, 0)
        c, d = vid(i + 1, ns), vid(i, ns)
        tris += [(a, b, c), (a, c, d)]
    # half-disc caps fanned from their phi = 0 vertex; the phi = 0..pi chord is the base edge
    for j in range(1, ns):
        tris.append((vid(0, 0), vid(0, j + 1), vid(0, j)))
        tris.append((vid(nr, 0), vid(nr, j), vid(nr, j + 1)))
    return verts, np.asarray(tris, dtype=np.int64)


def deform_tube(tube: TubeModel, elongation_m: float) -> Mesh:
    """Axial stretch by (L0 + x) / L0 about the fixed end, radius scaled by its inverse
    square root so the volume is unchanged."""
    L0 = tube.rest_length_m
    if not elongation_m >= 0.0:
        raise ValueError(f"elongation must be >= 0, got {elongation_m}")
    if elongation_m >= L0:
        raise ValueError(f"elongation {elongation_m} must be below the rest length {L0}")
    lam = (L0 + elongation_m) / L0
    verts, tris = tube_local_mesh(tube)
    verts = verts * np.array([lam, 1.0 / np.sqrt(lam), 1.0 / np.sqrt(lam)])
    world = np.asarray(tube.anchor, float) + verts @ tube.frame().T
    return Mesh(world, tris)


def plane_mesh(z, half_width, half_height, centre=(0.0, 0.0)):
    """Fronto-parallel rectangle at depth z, wound toward the camera."""
    x0, y0 = centre
    v = np.array(
        [
            [x0 - half_width, y0 - half_height, z],
            [x0 + half_width, y0 - half_height, z],
            [x0 + half_width, y0 + half_height, z],
            [x0 - half_width, y0 + half_height, z],
        ]
    )
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


@dataclass
class SceneConfig:
    # cameras
    width: int = 640
    height: int = 480
    focal_px: float = 800.0
    baseline_m: float = 0.004
    # projector (midway between the cameras)
    projector_tilt_deg: float = 5.0
    projector_fov_deg: float | None = None  # None: match the camera's horizontal FOV
    fringe_count: int = 64
    fringe_width_px: int = 10
    # tube
    tube_length_m: float = 0.06
    tube_radius_m: float = 0.008
    tube_anchor_x: float = -0.055
    tube_anchor_y: float = 0.0
    tube_depth_m: float = 0.16
    albedo_r: float = 0.85
    albedo_g: float = 0.6
    albedo_b: float = 0.55
    tube_rings: int = 48
    tube_segments: int = 24
    # material and pull protocol
    stiffness_n_per_m: float = 40.0
    damping_n_s_per_m: float | None = None
    pull_speed_m_s: float = 0.01
    duration_s: float = 5.0
    peak_force_n: float = 3.0
    rescale_speed: bool = False
    sample_rate_hz: float = 30.0
    # nuisance
    noise_sigma: float = 1.0 / 255.0
    tint: float = 0.10
    pose_jitter_deg: float = 1.0
    pose_jitter_m: float = 0.001
    # matching
    d_min: int = 8
    d_max: int = 40
    relocation_radius: int = 16
    p1: float = 8.0
    p2: float = 32.0
    n_paths: int = 8
    # dataset
    cloud_points: int = 1024
    min_density: float = 0.10
    material_id: str = ""

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be > 0")
        if self.pull_speed_m_s <= 0:
            raise ValueError("pull speed must be > 0")
        if self.noise_sigma > 2.0 / 255.0 + 1e-12:
            raise ValueError("noise_sigma is capped at 2/255")
        if self.n_paths not in (4, 8):
            raise ValueError("n_paths must be 4 or 8")

    @property
    def rig(self) -> geo.StereoRig:
        return geo.StereoRig(
            self.focal_px, 0.5 * (self.width - 1), 0.5 * (self.height - 1), self.baseline_m
        )

    @property
    def material(self) -> cm.MaterialParams:
        return cm.MaterialParams(
            cm.Model.KELVIN_VOIGT,
            lumped_stiffness_n_per_m=self.stiffness_n_per_m,
            lumped_damping_n_s_per_m=self.damping_n_s_per_m,
        )

    @property
    def material_name(self) -> str:
        return self.material_id or f"k{self.stiffness_n_per_m:g}"

    @property
    def pattern_spec(self) -> pat.PatternSpec:
        wp = self.fringe_count * self.fringe_width_px
        return pat.PatternSpec(
            self.fringe_count, self.fringe_width_px, int(round(wp * self.height / self.width))
        )

    @property
    def projector(self) -> render.Projector:
        spec = self.pattern_spec
        fov = self.projector_fov_deg
        if fov is None:
            fov = np.rad2deg(2 * np.arctan(0.5 * self.width / self.focal_px))
        return render.Projector.looking_forward(
            (0.5 * self.baseline_m, 0.0, 0.0),
            self.projector_tilt_deg,
            fov,
            spec.fringe_count * spec.fringe_width_px,
            spec.height_px,
        )

    @property
    def tube(self) -> TubeModel:
        return TubeModel(
            self.tube_length_m,
            self.tube_radius_m,
            (self.tube_anchor_x, self.tube_anchor_y, self.tube_depth_m),
            albedo=(self.albedo_r, self.albedo_g, self.albedo_b),
            rings=self.tube_rings,
            segments=self.tube_segments,
        )

    @property
    def match_config(self) -> stereo.MatchConfig:
        paths = stereo.EIGHT_PATHS if self.n_paths == 8 else stereo.FOUR_PATHS
        return stereo.MatchConfig(
            self.d_min, self.d_max, self.relocation_radius, stereo.SgmParams(self.p1, self.p2, paths)
        )

    def replace(self, **changes) -> "SceneConfig":
        d = asdict(self)
        d.update(changes)
        return SceneConfig(**d)


def scene_fields():
    return {f.name: f for f in fields(SceneConfig)}


@dataclass
class Rendered:
    pair: stereo.StereoPair
    reference: stereo.StereoPair
    depth_left: np.ndarray
    depth_right: np.ndarray

    @property
    def hit_left(self):
        return np.isfinite(self.depth_left)


def render_stereo(
    scene: SceneConfig,
    mesh: Mesh,
    albedo=None,
    texture=None,
    with_pattern=True,
    rng=None,
    noise_sigma=None,
) -> Rendered:
    """Ray-cast both views. Surface colour = albedo * projected texel; background black.

    `texture` overrides the scene pattern; `with_pattern=False` projects uniform
    white. Returns the captured pair, the white-projection reference pair and
    both depth maps. Noise is added only when `rng` is given.
    """
    # intrinsics taken directly so a zero baseline (identical views) can be rendered
    f, cx, cy = scene.focal_px, 0.5 * (scene.width - 1), 0.5 * (scene.height - 1)
    proj = scene.projector
    if texture is None and with_pattern:
        texture = pat.generate_pattern(scene.pattern_spec).pixels
    if albedo is None:
        albedo = (scene.albedo_r, scene.albedo_g, scene.albedo_b)
    sigma = scene.noise_sigma if noise_sigma is None else noise_sigma
    images, refs, depths = [], [], []
    for ox in (0.0, scene.baseline_m):
        origin = np.array([ox, 0.0, 0.0])
        depth, _ = render.cast_depth(
            mesh.vertices, mesh.triangles, origin, f, cx, cy, scene.width, scene.height
        )
        hit = np.isfinite(depth)
        pts = render.hit_points(np.where(hit, depth, 0.0), origin, f, cx, cy)
        img = render.shade(pts, hit, albedo, proj, texture if with_pattern else None)
        ref = render.shade(pts, hit, albedo, proj, None)
        if rng is not None and sigma > 0:
            img = np.clip(img + rng.normal(0.0, sigma, img.shape), 0.0, 1.0)
            ref = np.clip(ref + rng.normal(0.0, sigma, ref.shape), 0.0, 1.0)
        images.append(img)
        refs.append(ref)
        depths.append(depth)
    if not np.isfinite(depths[0]).any() and not np.isfinite(depths[1]).any():
        raise ValueError("mesh is outside both camera frusta")
    return Rendered(
        stereo.StereoPair(*images), stereo.StereoPair(*refs), depths[0], depths[1]
    )


def match_rendered(scene: SceneConfig, rendered: Rendered, margin=4) -> stereo.DisparityMap:
    """Run the matcher on the band of rows that contain lit surface.

    Rows with no correctable reference pixel in either view carry no surface and
    are left Unmatched; cropping them keeps per-frame cost proportional to the
    object's size.
    """
    h, w = scene.height, scene.width
    lit = np.any(rendered.reference.left > 0.05, axis=-1) | np.any(
        rendered.reference.right > 0.05, axis=-1
    )
    rows = np.nonzero(lit.any(axis=1))[0]
    disp = np.full((h, w), np.nan)
    prov = np.full((h, w), stereo.UNMATCHED, dtype=np.uint8)
    ids = np.full((h, w), -1, dtype=np.int64)
    cfg = scene.match_config
    if len(rows) >= 3:
        r0, r1 = max(rows[0] - margin, 0), min(rows[-1] + margin + 1, h)
        crop = lambda p: stereo.StereoPair(p.left[r0:r1], p.right[r0:r1])  # noqa: E731
        dm = stereo.match(crop(rendered.pair), scene.pattern_spec, cfg, crop(rendered.reference))
        disp[r0:r1] = dm.disparity
        prov[r0:r1] = dm.provenance
        ids[r0:r1] = dm.left_ids
    return stereo.DisparityMap(disp, prov, cfg.d_min, cfg.d_max, ids)


# pull protocol ----------------------------------------------------------------


@dataclass
class PullProfile:
    t: np.ndarray
    elongation: np.ndarray
    force: np.ndarray
    speed: float
    ramp_end_s: float

    def phase(self, i):
        return "tracting" if self.t[i] < self.ramp_end_s else "holding"


def pull_profile(scene: SceneConfig) -> PullProfile:
    """Prescribed elongation ramp at the pull speed until the force reaches the peak,
    then hold; forces from the lumped Kelvin-Voigt law on the sampled elongation."""
    mat = scene.material
    k, c = mat.k, mat.c
    n = int(round(scene.duration_s * scene.sample_rate_hz))
    t = np.arange(n) / scene.sample_rate_hz
    v = scene.pull_speed_m_s
    if scene.rescale_speed:
        v = scene.peak_force_n / (k * scene.duration_s + c)
    t_peak = (scene.peak_force_n - c * v) / (k * v)
    x = v * np.minimum(t, t_peak)
    force = cm.traction_force(mat, x, t)
    return PullProfile(t, x, force, v, t_peak)


# dataset ------------------------------------------------------------------------


@dataclass
class ForceSample:
    cloud: geo.PointCloud
    force_n: float
    t_s: float
    material_id: str
    pull_id: int
    sample_id: int = 0
    phase: str = "tracting"
    density: float = 0.0
    flagged: bool = False


def _random_rotation(rng, max_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = np.deg2rad(rng.uniform(-max_deg, max_deg))
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(ang) * k + (1 - np.cos(ang)) * (k @ k)


def jittered_tube(scene: SceneConfig, rng) -> TubeModel:
    base = scene.tube
    rot = _random_rotation(rng, scene.pose_jitter_deg)
    shift = rng.uniform(-scene.pose_jitter_m, scene.pose_jitter_m, size=3)
    return TubeModel(
        base.rest_length_m,
        base.radius_m,
        tuple(np.asarray(base.anchor) + shift),
        tuple(rot @ np.asarray(base.axis, float)),
        tuple(rot @ np.asarray(base.up, float)),
        base.albedo,
        base.rings,
        base.segments,
    )


def simulate_frame(scene, tube, elongation, albedo, rng, keep=False):
    """Deform, render, match and triangulate one frame.

    Returns (cloud, density), plus (rendered, disparity map) when `keep` is set.
    Density is the accepted fraction of left-view surface pixels.
    """
    mesh = deform_tube(tube, elongation)
    rendered = render_stereo(scene, mesh, albedo=albedo, rng=rng)
    dm = match_rendered(scene, rendered)
    cloud, _ = geo.triangulate(dm, scene.rig, mask=dm.accepted)
    hits = int(rendered.hit_left.sum())
    density = float(dm.accepted.sum()) / hits if hits else 0.0
    if keep:
        return cloud, density, rendered, dm
    return cloud, density


def generate_dataset(
    scene: SceneConfig, n_pulls: int, seed: int, first_pull=0, progress=None, on_frame=None
):
    """Samples for `n_pulls` repetitions of the pull protocol.

    Each pull gets its own pose jitter, albedo tint and noise stream drawn from
    (seed, pull index), so pulls can be generated independently and in any
    order. Frames whose valid-match density falls under `min_density` are kept
    but flagged. `on_frame(sample_id, rendered, disparity_map)` sees every frame.
    """
    profile = pull_profile(scene)
    samples = []
    sid = first_pull * len(profile.t)
    for pull in range(first_pull, first_pull + n_pulls):
        rng = np.random.default_rng([seed, pull])
        tube = jittered_tube(scene, rng)
        tint = 1.0 + rng.uniform(-scene.tint, scene.tint, size=3)
        albedo = np.clip(np.asarray(tube.albedo) * tint, 0.0, 1.0)
        n_flagged = 0
        for i, (t, x, f) in enumerate(zip(profile.t, profile.elongation, profile.force)):
            if on_frame is None:
                cloud, density = simulate_frame(scene, tube, x, albedo, rng)
            else:
                cloud, density, rendered, dm = simulate_frame(scene, tube, x, albedo, rng, keep=True)
                on_frame(sid, rendered, dm)
            flagged = density < scene.min_density or len(cloud) < 2
            if flagged:
                n_flagged += 1
                log.info("pull %d t=%.3f: match density %.3f below %.2f", pull, t, density, scene.min_density)
            if len(cloud) > scene.cloud_points:
                cloud = geo.sample_points(cloud, scene.cloud_points, [seed, pull, i])
            samples.append(
                ForceSample(
                    cloud, float(f), float(t), scene.material_name, pull, sid,
                    profile.phase(i), density, flagged,
                )
            )
            sid += 1
        if n_flagged:
            log.warning(
                "pull %d: %d of %d frames below match density %.2f",
                pull, n_flagged, len(profile.t), scene.min_density,
            )
        if progress is not None:
            progress(pull, samples)
    return samples


def write_dataset(out_dir, samples, scene: SceneConfig | None = None):
    os.makedirs(os.path.join(out_dir, "clouds"), exist_ok=True)
    rows = []
    for s in samples:
        rel = os.path.join("clouds", f"{s.sample_id:06d}.ply")
        geo.write_ply(os.path.join(out_dir, rel), s.cloud)
        rows.append(
            dict(
                sample_id=s.sample_id,
                cloud_path=rel,
                force_newtons=f"{s.force_n:.17g}",
                material_id=s.material_id,
                t_s=f"{s.t_s:.6f}",
                pull_id=s.pull_id,
                phase=s.phase,
                density=f"{s.density:.6f}",
                flagged=int(s.flagged),
            )
        )
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if scene is not None:
        from .config import write_config

        write_config(os.path.join(out_dir, "scene.cfg"), {"scene": scene})


def load_dataset(root):
    path = os.path.join(root, "manifest.csv")
    samples = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            missing = [k for k in MANIFEST_FIELDS[:6] if k not in row]
            if missing:
                raise ValueError(f"{path}: manifest lacks columns {missing}")
            cloud = geo.read_ply(os.path.join(root, row["cloud_path"]))
            samples.append(
                ForceSample(
                    cloud,
                    float(row["force_newtons"]),
                    float(row["t_s"]),
                    row["material_id"],
                    int(row["pull_id"]),
                    int(row["sample_id"]),
                    row.get("phase") or "tracting",
                    float(row.get("density") or 0.0),
                    bool(int(row.get("flagged") or 0)),
                )
            )
    return samples


def network_inputs(samples, n_points, seed):
    """(S, n_points, 3) normalised clouds; sample i uses the PRNG stream (seed, sample_id)."""
    out = np.empty((len(samples), n_points, 3))
    for i, s in enumerate(samples):
        sub = geo.sample_points(s.cloud, n_points, [seed, s.sample_id])
        out[i] = geo.normalize_cloud(sub).points
    return out


def box_scale_dataset(n, n_points, seed, lengths=(0.05, 0.15), cross=0.05):
    """Toy regression set: points on a box of length a in [lengths] and square cross
    section `cross`, target = 10 * D_max of the raw box. Normalisation removes the
    absolute size, but the aspect ratio survives and determines D_max."""
    rng = np.random.default_rng(seed)
    clouds = np.empty((n, n_points, 3))
    targets = np.empty(n)
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)
    for s in range(n):
        a = rng.uniform(*lengths)
        dims = np.array([a, cross, cross])
        pts = rng.uniform(0.0, 1.0, size=(n_points, 3))
        # push points onto a random face so the box outline is visible
        face = rng.integers(0, 3, size=n_points)
        pts[np.arange(n_points), face] = rng.integers(0, 2, size=n_points)
        pts[:8] = corners
        raw = pts * dims
        targets[s] = 10.0 * geo.max_pairwise_distance(raw)
        clouds[s] = geo.normalize_cloud(raw).points
    return clouds, targets
