"""Image and map file formats: 8-bit PNG, little-endian PFM, pattern sidecars."""
from __future__ import annotations

import configparser

import numpy as np
from PIL import Image

from . import pattern as pat
from . import stereo
from .config import ConfigError

# provenance PNG colours
TAG_COLORS = {
    stereo.CANDIDATE: (255, 255, 0),
    stereo.VERIFIED: (0, 200, 0),
    stereo.RELOCATED: (0, 120, 255),
    stereo.REJECTED: (220, 0, 0),
    stereo.UNMATCHED: (0, 0, 0),
}


def write_png(path, rgb):
    """Float RGB (or grey) in [0, 1] -> 8-bit PNG with value round(255 v)."""
    a = np.clip(np.asarray(rgb, dtype=float), 0.0, 1.0)
    Image.fromarray(np.rint(255.0 * a).astype(np.uint8)).save(path)


def read_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def write_pfm(path, values, invalid=-1.0):
    """Single-channel little-endian PFM; NaN is stored as `invalid`."""
    a = np.asarray(values, dtype=float)
    a = np.where(np.isfinite(a), a, invalid).astype("<f4")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(a).tobytes())


def read_pfm(path, invalid=-1.0):
    """Inverse of write_pfm; `invalid` entries come back as NaN."""
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 1 if kind == b"Pf" else 3
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * ch:
        raise ValueError(f"{path}: expected {w * h * ch} floats, found {data.size}")
    a = np.flipud(data.reshape((h, w) if ch == 1 else (h, w, 3))).astype(float)
    return np.where(a == invalid, np.nan, a)


def write_provenance_png(path, provenance):
    prov = np.asarray(provenance)
    rgb = np.zeros(prov.shape + (3,), dtype=np.uint8)
    for tag, col in TAG_COLORS.items():
        rgb[prov == tag] = col
    Image.fromarray(rgb).save(path)


def read_provenance_png(path):
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"))
    prov = np.full(rgb.shape[:2], stereo.UNMATCHED, dtype=np.uint8)
    for tag, col in TAG_COLORS.items():
        prov[np.all(rgb == col, axis=-1)] = tag
    return prov


def write_pattern_sidecar(path, spec: pat.PatternSpec):
    seq = spec.sequence
    cp = configparser.ConfigParser(interpolation=None)
    cp["pattern"] = {
        "alphabet_size": str(seq.alphabet_size),
        "window_len": str(seq.window_len),
        "sequence": " ".join(str(s) for s in seq.symbols),
        "fringe_count": str(spec.fringe_count),
        "fringe_width_px": str(spec.fringe_width_px),
        "height_px": str(spec.height_px),
        "symbol_hues_deg": ", ".join(repr(float(h)) for h in spec.symbol_hues_deg),
        "hue_tolerance_deg": repr(float(spec.hue_tolerance_deg)),
    }
    with open(path, "w") as f:
        cp.write(f)


def read_pattern_sidecar(path) -> pat.PatternSpec:
    cp = configparser.ConfigParser(interpolation=None)
    with open(path) as f:
        cp.read_file(f)
    if not cp.has_section("pattern"):
        raise ConfigError(f"{path}: missing [pattern] section")
    s = cp["pattern"]
    try:
        n, m = int(s["alphabet_size"]), int(s["window_len"])
        seq = pat.de_bruijn(n, m)
        stored = tuple(int(v) for v in s["sequence"].split())
        if stored != seq.symbols:
            raise ConfigError(f"{path}: sequence does not match de_bruijn({n}, {m})")
        return pat.PatternSpec(
            int(s["fringe_count"]),
            int(s["fringe_width_px"]),
            int(s["height_px"]),
            seq,
            tuple(float(v) for v in s["symbol_hues_deg"].split(",")),
            hue_tolerance_deg=float(s.get("hue_tolerance_deg", "30")),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc.args[0]}") from None
