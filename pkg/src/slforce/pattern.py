"""One-shot De Bruijn colour-fringe pattern: construction and decoding.

The pattern is built in HSV space. Hue carries the De Bruijn symbol of each
vertical fringe, saturation is fixed at 1 and value follows one raised-cosine
period per fringe, bright at the fringe edges and dark in the middle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

UNDECODABLE = -1

# label codes used by the per-pixel hue classifier
_DARK = -1
_UNKNOWN = -2


@dataclass(frozen=True)
class DeBruijnSeq:
    alphabet_size: int
    window_len: int
    symbols: tuple[int, ...]

    def __len__(self):
        return len(self.symbols)

    def cyclic_windows(self) -> list[tuple[int, ...]]:
        n = len(self.symbols)
        ext = self.symbols + self.symbols[: self.window_len - 1]
        return [ext[i : i + self.window_len] for i in range(n)]


def de_bruijn(n: int, m: int) -> DeBruijnSeq:
    """Build B(n, m) as an Eulerian circuit of the order-(m-1) De Bruijn graph.

    Nodes are (m-1)-symbol strings encoded base n; leaving a node by symbol s
    appends s. Hierholzer's algorithm always takes the smallest unused symbol,
    so the output is deterministic.
    """
    if n < 2:
        raise ValueError(f"alphabet size must be >= 2, got {n}")
    if m < 1:
        raise ValueError(f"window length must be >= 1, got {m}")
    if m == 1:
        return DeBruijnSeq(n, 1, tuple(range(n)))

    n_nodes = n ** (m - 1)
    next_sym = [0] * n_nodes
    stack = [0]
    labels = [None]  # symbol of the edge used to reach each stack entry
    circuit = []
    while stack:
        v = stack[-1]
        s = next_sym[v]
        if s < n:
            next_sym[v] = s + 1
            stack.append((v * n + s) % n_nodes)
            labels.append(s)
        else:
            stack.pop()
            circuit.append(labels.pop())
    circuit.reverse()
    symbols = tuple(circuit[1:])
    assert len(symbols) == n ** m
    return DeBruijnSeq(n, m, symbols)


@dataclass
class PatternSpec:
    fringe_count: int = 64
    fringe_width_px: int = 10
    height_px: int = 480
    sequence: DeBruijnSeq = field(default_factory=lambda: de_bruijn(3, 4))
    symbol_hues_deg: tuple[float, ...] = (0.0, 120.0, 240.0)
    width_px: int | None = None
    hue_tolerance_deg: float = 30.0

    def __post_init__(self):
        self.symbol_hues_deg = tuple(float(h) for h in self.symbol_hues_deg)
        if self.fringe_count < 1 or self.fringe_width_px < 1 or self.height_px < 1:
            raise ValueError("pattern dimensions must be positive")
        if self.fringe_count > len(self.sequence):
            raise ValueError(
                f"fringe_count {self.fringe_count} exceeds sequence length {len(self.sequence)}"
            )
        if len(self.symbol_hues_deg) != self.sequence.alphabet_size:
            raise ValueError("need exactly one hue per alphabet symbol")
        hues = self.symbol_hues_deg
        for i in range(len(hues)):
            for j in range(i + 1, len(hues)):
                if _angular_distance(hues[i], hues[j]) < 60.0:
                    raise ValueError(f"hues {hues[i]} and {hues[j]} closer than 60 degrees")

    @property
    def fringe_symbols(self) -> np.ndarray:
        return np.asarray(self.sequence.symbols[: self.fringe_count], dtype=np.int64)

    @property
    def window_len(self) -> int:
        return self.sequence.window_len


@dataclass
class PatternImage:
    width_px: int
    height_px: int
    pixels: np.ndarray  # (H, W, 3) float64 RGB in [0, 1]


def _angular_distance(a, b):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def fringe_value(width: int, fringe_width: int) -> np.ndarray:
    """V channel profile along a row: one cosine period per fringe, 1 at each fringe start."""
    i = np.arange(width)
    phase = (i % fringe_width) / fringe_width
    return 0.5 + 0.5 * np.cos(2.0 * np.pi * phase)


def generate_pattern(spec: PatternSpec) -> PatternImage:
    width = spec.fringe_count * spec.fringe_width_px
    if spec.width_px is not None and spec.width_px != width:
        raise ValueError(
            f"fringe_count*fringe_width_px = {width} does not match width_px = {spec.width_px}"
        )
    cols = np.arange(width)
    sym = spec.fringe_symbols[cols // spec.fringe_width_px]
    hue = np.asarray(spec.symbol_hues_deg)[sym] / 360.0
    hsv = np.empty((spec.height_px, width, 3))
    hsv[..., 0] = hue[None, :]
    hsv[..., 1] = 1.0
    hsv[..., 2] = fringe_value(width, spec.fringe_width_px)[None, :]
    return PatternImage(width, spec.height_px, hsv_to_rgb(hsv))


def classify_hue(hue_deg, spec: PatternSpec, tolerance_deg: float | None = None):
    """Nearest canonical symbol for a hue angle, or None when outside the tolerance.

    Accepts arrays too; the array form returns -2 where the scalar form returns None.
    """
    tol = spec.hue_tolerance_deg if tolerance_deg is None else tolerance_deg
    hues = np.asarray(spec.symbol_hues_deg)
    h = np.asarray(hue_deg, dtype=float)
    dist = _angular_distance(h[..., None], hues)
    best = np.argmin(dist, axis=-1)
    ok = np.take_along_axis(dist, best[..., None], axis=-1)[..., 0] <= tol
    if h.ndim == 0:
        return int(best) if bool(ok) else None
    return np.where(ok, best, _UNKNOWN).astype(np.int64)


def _window_table(spec: PatternSpec) -> np.ndarray:
    """Map base-n window code -> start index among the visible fringes (-1 if absent)."""
    n, m = spec.sequence.alphabet_size, spec.window_len
    table = np.full(n ** m, -1, dtype=np.int64)
    sym = spec.fringe_symbols
    for start in range(spec.fringe_count - m + 1):
        code = 0
        for s in sym[start : start + m]:
            code = code * n + int(s)
        table[code] = start
    return table


def pixel_labels(rgb: np.ndarray, spec: PatternSpec, v_min=0.2, s_min=0.4):
    """Per-pixel V channel and symbol label (-1 dark/grey, -2 unrecognised hue)."""
    hsv = rgb_to_hsv(np.clip(rgb, 0.0, 1.0))
    value = hsv[..., 2]
    labels = classify_hue(hsv[..., 0] * 360.0, spec)
    labels = np.where((value >= v_min) & (hsv[..., 1] >= s_min), labels, _DARK)
    return value, labels.astype(np.int64)


def decode_fringes(image, spec: PatternSpec, valid=None, v_low=0.4, v_high=0.6) -> np.ndarray:
    """Absolute fringe ID per pixel, UNDECODABLE (-1) where no ID can be assigned.

    `image` is a base-colour corrected RGB image (H, W, 3) or a single row (W, 3).
    Rows are decoded independently. A fringe is one dark run (its centre) plus
    the adjoining halves of the bright runs around it; the split inside a
    bright run is the hue change, or the brightest pixel when both sides share
    a hue. `valid` masks pixels that must not take part (e.g. no reference).
    """
    img = np.asarray(image, dtype=float)
    single_row = img.ndim == 2
    if single_row:
        img = img[None]
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError("expected an RGB image or row")
    h, w = img.shape[:2]
    if w < spec.window_len * spec.fringe_width_px:
        raise ValueError(
            f"image width {w} is narrower than {spec.window_len} fringes of {spec.fringe_width_px} px"
        )
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    value, labels = pixel_labels(img, spec)
    ids = _decode_rows(
        value,
        labels,
        np.asarray(valid, dtype=np.bool_).reshape(h, w),
        _window_table(spec),
        spec.sequence.alphabet_size,
        spec.window_len,
        spec.fringe_count,
        v_low,
        v_high,
    )
    return ids[0] if single_row else ids


@numba.njit(cache=True)
def _decode_rows(value, labels, valid, table, n, m, fringe_count, v_low, v_high):
    h, w = value.shape
    out = np.full((h, w), -1, dtype=np.int64)
    # scratch buffers sized for the worst case of one run per pixel
    run_start = np.empty(w + 1, dtype=np.int64)
    run_dark = np.empty(w + 1, dtype=np.bool_)
    f_lo = np.empty(w + 1, dtype=np.int64)
    f_hi = np.empty(w + 1, dtype=np.int64)
    f_sym = np.empty(w + 1, dtype=np.int64)
    f_id = np.empty(w + 1, dtype=np.int64)
    counts = np.empty(n + 1, dtype=np.int64)
    for r in range(h):
        c = 0
        while c < w:
            if not valid[r, c]:
                c += 1
                continue
            seg0 = c
            while c < w and valid[r, c]:
                c += 1
            seg1 = c  # exclusive
            # hysteresis split into bright / dark runs
            nruns = 0
            dark = value[r, seg0] < 0.5 * (v_low + v_high)
            run_start[0] = seg0
            run_dark[0] = dark
            nruns = 1
            for x in range(seg0 + 1, seg1):
                v = value[r, x]
                if dark and v > v_high:
                    dark = False
                elif (not dark) and v < v_low:
                    dark = True
                else:
                    continue
                run_start[nruns] = x
                run_dark[nruns] = dark
                nruns += 1
            run_start[nruns] = seg1
            # boundaries: one per bright run lying between two dark runs
            nf = 0
            for k in range(nruns):
                if not run_dark[k]:
                    continue
                # an edge bright run has no other dark neighbour and is kept whole
                lo = seg0
                if k > 1:
                    lo = _bright_split(value, labels, r, run_start[k - 1], run_start[k])
                hi = seg1
                if k + 2 < nruns:
                    hi = _bright_split(value, labels, r, run_start[k + 1], run_start[k + 2])
                f_lo[nf] = lo
                f_hi[nf] = hi
                # majority symbol over labelled pixels
                for s in range(n + 1):
                    counts[s] = 0
                for x in range(lo, hi):
                    lab = labels[r, x]
                    if lab >= 0:
                        counts[lab] += 1
                    elif lab == -2:
                        counts[n] += 1
                total = 0
                best = 0
                for s in range(n + 1):
                    total += counts[s]
                    if counts[s] > counts[best]:
                        best = s
                if total == 0 or best == n or 2 * counts[best] <= total:
                    f_sym[nf] = -1
                else:
                    f_sym[nf] = best
                nf += 1
            if nf < m:
                continue
            for k in range(nf):
                start = k if k <= nf - m else nf - m
                code = 0
                ok = True
                for j in range(start, start + m):
                    s = f_sym[j]
                    if s < 0:
                        ok = False
                        break
                    code = code * n + s
                f_id[k] = -1
                if ok:
                    pos = table[code]
                    if pos >= 0:
                        fid = pos + (k - start)
                        if fid < fringe_count:
                            f_id[k] = fid
            # drop IDs contradicted by both decoded neighbours
            for k in range(nf):
                fid = f_id[k]
                if fid < 0:
                    continue
                left_ok = k == 0 or f_id[k - 1] < 0 or f_id[k - 1] == fid - 1
                right_ok = k == nf - 1 or f_id[k + 1] < 0 or f_id[k + 1] == fid + 1
                has_left = k > 0 and f_id[k - 1] >= 0
                has_right = k < nf - 1 and f_id[k + 1] >= 0
                if (has_left or has_right) and not (
                    (has_left and left_ok) or (has_right and right_ok)
                ):
                    continue
                for x in range(f_lo[k], f_hi[k]):
                    out[r, x] = fid
    return out


@numba.njit(cache=True)
def _bright_split(value, labels, r, lo, hi):
    """Split column of a bright run [lo, hi): first pixel of the right-hand fringe."""
    changes = 0
    pos = -1
    prev = -100
    for x in range(lo, hi):
        lab = labels[r, x]
        if lab == -1:
            continue
        if prev != -100 and lab != prev:
            changes += 1
            pos = x
        prev = lab
    if changes == 1:
        return pos
    best = lo
    for x in range(lo + 1, hi):
        if value[r, x] > value[r, best]:
            best = x
    return best
