"""Semi-global matching over a Birchfield-Tomasi + Sobel cost volume, with
De Bruijn fringe-ID verification of the winner-take-all matches.

Intensities are handled on a 0..255 scale so the default penalties
(P1 = 8, P2 = 32) have their usual meaning.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from . import pattern as pat

INVALID_COST = 65535.0

# provenance tags
CANDIDATE = 0
VERIFIED = 1
RELOCATED = 2
REJECTED = 3
UNMATCHED = 4
TAG_NAMES = {
    CANDIDATE: "candidate",
    VERIFIED: "verified",
    RELOCATED: "relocated",
    REJECTED: "rejected",
    UNMATCHED: "unmatched",
}

EIGHT_PATHS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))
FOUR_PATHS = EIGHT_PATHS[:4]


@dataclass
class StereoPair:
    left: np.ndarray  # (H, W, 3) RGB in [0, 1]
    right: np.ndarray
    rectified: bool = True

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        if self.left.shape != self.right.shape:
            raise ValueError(f"image shapes differ: {self.left.shape} vs {self.right.shape}")

    @property
    def shape(self):
        return self.left.shape[:2]

    def grey(self):
        return to_grey(self.left), to_grey(self.right)


@dataclass
class CostVolume:
    d_min: int
    d_max: int
    costs: np.ndarray  # (H, W, D) float64
    valid: np.ndarray  # (H, W, D) bool; False where col - d falls outside the right image

    @property
    def height(self):
        return self.costs.shape[0]

    @property
    def width(self):
        return self.costs.shape[1]

    @property
    def disparities(self):
        return np.arange(self.d_min, self.d_max + 1)


@dataclass
class SgmParams:
    p1: float = 8.0
    p2: float = 32.0
    path_directions: tuple[tuple[int, int], ...] = EIGHT_PATHS

    def __post_init__(self):
        self.path_directions = tuple(tuple(int(v) for v in r) for r in self.path_directions)
        if not (0 < self.p1 <= self.p2):
            raise ValueError(f"need 0 < p1 <= p2, got p1={self.p1}, p2={self.p2}")
        if not self.path_directions:
            raise ValueError("at least one path direction required")
        if len(set(self.path_directions)) != len(self.path_directions):
            raise ValueError("path directions must be distinct")
        if any(r == (0, 0) for r in self.path_directions):
            raise ValueError("zero path direction")


@dataclass
class DisparityMap:
    disparity: np.ndarray  # (H, W) float64, NaN where invalid
    provenance: np.ndarray  # (H, W) uint8 tags
    d_min: int = 0
    d_max: int = 0
    left_ids: np.ndarray | None = field(default=None, repr=False)

    @property
    def height(self):
        return self.disparity.shape[0]

    @property
    def width(self):
        return self.disparity.shape[1]

    @property
    def accepted(self):
        """Mask of Verified or Relocated pixels."""
        return (self.provenance == VERIFIED) | (self.provenance == RELOCATED)

    def valid_mask(self):
        return np.isfinite(self.disparity)


def to_grey(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luma on a 0..255 scale; keeps the fringe hues distinguishable."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim == 2:
        return rgb * 255.0
    return 255.0 * (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])


def sobel_x(image: np.ndarray) -> np.ndarray:
    """Absolute horizontal Sobel response, borders replicated."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"sobel_x needs a 2-D image of at least 3x3, got {img.shape}")
    kernel = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    return np.abs(ndimage.correlate(img, kernel, mode="nearest"))


def _half_sample_bounds(row):
    row = np.asarray(row, dtype=float)
    left = np.concatenate([row[:1], row[:-1]])
    right = np.concatenate([row[1:], row[-1:]])
    lo_half = 0.5 * (row + left)
    hi_half = 0.5 * (row + right)
    return (
        np.minimum(np.minimum(lo_half, hi_half), row),
        np.maximum(np.maximum(lo_half, hi_half), row),
    )


def bt_cost(left_row, right_row, col: int, d: int) -> float:
    """Birchfield-Tomasi dissimilarity of left[col] and right[col - d].

    Returns INVALID_COST when the correspondence falls outside the right row.
    """
    left_row = np.asarray(left_row, dtype=float)
    right_row = np.asarray(right_row, dtype=float)
    xr = col - d
    if not (0 <= col < len(left_row)) or not (0 <= xr < len(right_row)):
        return INVALID_COST
    lmin, lmax = _half_sample_bounds(left_row)
    rmin, rmax = _half_sample_bounds(right_row)
    il, ir = left_row[col], right_row[xr]
    d_lr = max(0.0, il - rmax[xr], rmin[xr] - il)
    d_rl = max(0.0, ir - lmax[col], lmin[col] - ir)
    return float(min(d_lr, d_rl))


@numba.njit(cache=True)
def _bt_volume(left, right, d_min, costs, valid):
    h, w = left.shape
    nd = costs.shape[2]
    lmin = np.empty(w)
    lmax = np.empty(w)
    rmin = np.empty(w)
    rmax = np.empty(w)
    for r in range(h):
        for x in range(w):
            xl = x - 1 if x > 0 else 0
            xh = x + 1 if x < w - 1 else w - 1
            a = 0.5 * (left[r, x] + left[r, xl])
            b = 0.5 * (left[r, x] + left[r, xh])
            lmin[x] = min(min(a, b), left[r, x])
            lmax[x] = max(max(a, b), left[r, x])
            a = 0.5 * (right[r, x] + right[r, xl])
            b = 0.5 * (right[r, x] + right[r, xh])
            rmin[x] = min(min(a, b), right[r, x])
            rmax[x] = max(max(a, b), right[r, x])
        for x in range(w):
            il = left[r, x]
            for k in range(nd):
                xr = x - (d_min + k)
                if xr < 0 or xr >= w:
                    valid[r, x, k] = False
                    continue
                ir = right[r, xr]
                d1 = max(0.0, max(il - rmax[xr], rmin[xr] - il))
                d2 = max(0.0, max(ir - lmax[x], lmin[x] - ir))
                costs[r, x, k] += min(d1, d2)


def build_cost_volume(pair: StereoPair, d_min: int, d_max: int) -> CostVolume:
    """C(p, d) = BT on raw intensities + BT on |Sobel-x| intensities."""
    if d_min > d_max:
        raise ValueError(f"d_min ({d_min}) > d_max ({d_max})")
    if not pair.rectified:
        raise ValueError("stereo pair must be rectified")
    gl, gr = pair.grey()
    h, w = gl.shape
    nd = d_max - d_min + 1
    costs = np.zeros((h, w, nd))
    valid = np.ones((h, w, nd), dtype=np.bool_)
    _bt_volume(gl, gr, d_min, costs, valid)
    _bt_volume(sobel_x(gl), sobel_x(gr), d_min, costs, valid)
    costs[~valid] = INVALID_COST
    return CostVolume(d_min, d_max, costs, valid)


@numba.njit(cache=True)
def _path_cost(c, dx, dy, p1, p2, out):
    h, w, nd = c.shape
    ys = range(h) if dy >= 0 else range(h - 1, -1, -1)
    xs_fwd = dx >= 0
    for y in ys:
        for i in range(w):
            x = i if xs_fwd else w - 1 - i
            px = x - dx
            py = y - dy
            if px < 0 or px >= w or py < 0 or py >= h:
                for k in range(nd):
                    out[y, x, k] = c[y, x, k]
                continue
            prev_min = out[py, px, 0]
            for k in range(1, nd):
                if out[py, px, k] < prev_min:
                    prev_min = out[py, px, k]
            jump = prev_min + p2
            for k in range(nd):
                best = out[py, px, k]
                if k > 0:
                    v = out[py, px, k - 1] + p1
                    if v < best:
                        best = v
                if k < nd - 1:
                    v = out[py, px, k + 1] + p1
                    if v < best:
                        best = v
                if jump < best:
                    best = jump
                out[y, x, k] = c[y, x, k] + best - prev_min


def path_costs(volume: CostVolume, direction, params: SgmParams) -> np.ndarray:
    """L_r for a single path direction r = (dx, dy); the predecessor of p is p - r."""
    out = np.empty_like(volume.costs)
    dx, dy = direction
    _path_cost(volume.costs, int(dx), int(dy), float(params.p1), float(params.p2), out)
    return out


def aggregate_paths(volume: CostVolume, params: SgmParams) -> CostVolume:
    """S(p, d) = sum of L_r(p, d) over the configured directions, summed in list order."""
    total = np.zeros_like(volume.costs)
    buf = np.empty_like(volume.costs)
    for dx, dy in params.path_directions:
        _path_cost(volume.costs, dx, dy, float(params.p1), float(params.p2), buf)
        total += buf
    return CostVolume(volume.d_min, volume.d_max, total, volume.valid)


def select_disparity(aggregated: CostVolume) -> DisparityMap:
    """Winner-take-all; ties go to the smaller disparity, all-invalid pixels are Unmatched."""
    s = np.where(aggregated.valid, aggregated.costs, np.inf)
    best = np.argmin(s, axis=2)
    any_valid = aggregated.valid.any(axis=2)
    disp = np.where(any_valid, best + aggregated.d_min, np.nan).astype(float)
    prov = np.where(any_valid, CANDIDATE, UNMATCHED).astype(np.uint8)
    return DisparityMap(disp, prov, aggregated.d_min, aggregated.d_max)


def remove_base_color(captured, reference, min_reference=0.05):
    """Divide out surface reflectance measured under uniform white projection.

    Diagonal simplification of the Caspi colour model: each channel is scaled
    independently. Returns (corrected, correctable); pixels where any reference
    channel is at or below `min_reference` are uncorrectable and set to 0.
    """
    captured = np.asarray(captured, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if captured.shape != reference.shape:
        raise ValueError(f"shape mismatch: {captured.shape} vs {reference.shape}")
    ok = np.all(reference > min_reference, axis=-1)
    safe = np.where(reference > min_reference, reference, 1.0)
    corrected = np.clip(captured / safe, 0.0, 1.0)
    corrected[~ok] = 0.0
    return corrected, ok


@numba.njit(cache=True)
def _verify(disp, prov, left_ids, right_ids, radius, d_min, d_max, s, use_cost):
    h, w = disp.shape
    for y in range(h):
        for x in range(w):
            if prov[y, x] != 0:
                continue
            lid = left_ids[y, x]
            d = int(disp[y, x])
            xr = x - d
            if lid >= 0 and 0 <= xr < w and right_ids[y, xr] == lid:
                prov[y, x] = 1
                continue
            found = False
            best_d = 0
            best_cost = np.inf
            best_off = radius + 1
            if lid >= 0:
                for off in range(-radius, radius + 1):
                    xc = xr + off
                    if xc < 0 or xc >= w or right_ids[y, xc] != lid:
                        continue
                    dc = x - xc
                    if dc < d_min or dc > d_max:
                        continue
                    cost = s[y, x, dc - d_min] if use_cost else 0.0
                    a = abs(off)
                    if not found or cost < best_cost or (cost == best_cost and a < best_off):
                        found = True
                        best_cost = cost
                        best_off = a
                        best_d = dc
            if found:
                disp[y, x] = best_d
                prov[y, x] = 2
            else:
                disp[y, x] = np.nan
                prov[y, x] = 3


def verify_matches(
    disparity: DisparityMap, left_ids, right_ids, radius: int = 16, aggregated: CostVolume | None = None
) -> DisparityMap:
    """Check each candidate match by comparing left and right absolute fringe IDs.

    Equal IDs -> Verified. Otherwise the right scanline within +-radius of the
    original correspondent is searched for pixels with the left pixel's ID; the
    one with the lowest aggregated cost (nearest on ties, or nearest outright
    when no cost volume is given) gives the Relocated disparity. No candidate
    -> Rejected, disparity invalidated. Undecodable left pixels are Rejected.
    """
    left_ids = np.asarray(left_ids, dtype=np.int64)
    right_ids = np.asarray(right_ids, dtype=np.int64)
    disp = disparity.disparity.copy()
    prov = disparity.provenance.copy()
    if aggregated is not None:
        s = aggregated.costs
        use_cost = True
    else:
        s = np.zeros((1, 1, 1))
        use_cost = False
    _verify(
        disp, prov, left_ids, right_ids, int(radius), disparity.d_min, disparity.d_max, s, use_cost
    )
    return DisparityMap(disp, prov, disparity.d_min, disparity.d_max, left_ids)


@dataclass
class MatchConfig:
    d_min: int = 0
    d_max: int = 64
    radius: int = 16
    sgm: SgmParams = field(default_factory=SgmParams)


def match(
    pair: StereoPair,
    spec: pat.PatternSpec,
    config: MatchConfig,
    reference: StereoPair | None = None,
) -> DisparityMap:
    """Full two-step matcher: base-colour removal, fringe decoding, SGM, verification.

    Without a reference pair the captured images are decoded as-is.
    """
    if not pair.rectified:
        raise ValueError("stereo pair must be rectified")
    if reference is not None:
        left_c, left_ok = remove_base_color(pair.left, reference.left)
        right_c, right_ok = remove_base_color(pair.right, reference.right)
    else:
        left_c, right_c = pair.left, pair.right
        left_ok = right_ok = None
    left_ids = pat.decode_fringes(left_c, spec, valid=left_ok)
    right_ids = pat.decode_fringes(right_c, spec, valid=right_ok)
    volume = build_cost_volume(StereoPair(left_c, right_c), config.d_min, config.d_max)
    agg = aggregate_paths(volume, config.sgm)
    wta = select_disparity(agg)
    return verify_matches(wta, left_ids, right_ids, config.radius, agg)
