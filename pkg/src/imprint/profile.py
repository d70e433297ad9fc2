"""Height-map reduction and feature extraction.

Turns an indentation height map into a normalized 1D pile-up curve by
strip averaging, and extracts the pile-up, force, and hardness features
used throughout the pipeline.  Everything here is pure and stateless.

Unit convention: lengths in µm, loads in mN, so stresses and hardness
come out in GPa (1 GPa = 1 mN/µm²).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

MAP_MAGIC = b"IMPR"


@dataclass(frozen=True)
class HeightMap:
    """Surface heights relative to the unindented surface (0 = far field).

    heights[iy, ix] is the height at pixel (ix, iy); pitch is the pixel
    size, center the imprint center in (possibly fractional) pixel
    coordinates, and a the imprint lateral half-width.
    """

    heights: np.ndarray
    pitch: float
    center: Tuple[float, float]
    a: float

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", h)
        ny, nx = h.shape
        if nx < 16 or ny < 16:
            raise ValueError("height map must be at least 16x16")
        if not (self.a > 0.0 and self.pitch > 0.0):
            raise ValueError("pitch and lateral half-width must be positive")
        if not np.all(np.isfinite(h)):
            raise ValueError("heights must be finite")


@dataclass(frozen=True)
class PileUpCurve:
    """Normalized profile: x̂ = distance/a (strictly increasing), ĥ = height/a."""

    xhat: np.ndarray
    hhat: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.xhat, dtype=float)
        h = np.asarray(self.hhat, dtype=float)
        object.__setattr__(self, "xhat", x)
        object.__setattr__(self, "hhat", h)
        if x.shape != h.shape or x.ndim != 1:
            raise ValueError("curve arrays must be 1D and equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("curve positions must be strictly increasing")


@dataclass(frozen=True)
class PileUpFeatures:
    H_max: float
    V1: float
    O1: float
    V_half: float
    O_half: float
    V_quarter: float
    O_quarter: float
    V_eighth: float
    O_eighth: float


@dataclass(frozen=True)
class ForceFeatures:
    C: float
    S: float
    hr_over_hm: float


@dataclass(frozen=True)
class LoadCurve:
    """Loading and unloading branches as (depth, load) sample arrays."""

    loading: np.ndarray    # (n, 2) of (h, P)
    unloading: np.ndarray  # (n, 2) of (h, P)
    P_max: float
    h_m: float


# ---------------------------------------------------------------------------
# Strip averaging

def strip_average(hmap: HeightMap) -> PileUpCurve:
    """Reduce a height map to one normalized radial pile-up curve.

    Four bands of pixels are taken along the +X, -X, +Y and -Y
    semi-axes (perpendicular distance to the axis at most a/4).  Within
    each band, pixels are binned by their distance to the imprint
    center with bin width equal to the pixel pitch and averaged per
    bin; the four per-axis profiles are then averaged and both
    coordinates normalized by the lateral half-width.
    """
    h = hmap.heights
    ny, nx = h.shape
    cx, cy = hmap.center
    p = hmap.pitch
    a = hmap.a
    if not (0.0 <= cx <= nx - 1 and 0.0 <= cy <= ny - 1):
        raise ValueError("imprint center outside the grid")
    if a < 4.0 * p:
        raise ValueError("lateral half-width must span at least 4 pixels")

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    dx = (ix - cx) * p
    dy = (iy - cy) * p
    r = np.hypot(dx, dy)
    half = a / 4.0

    bands = [
        (dx >= 0.0) & (np.abs(dy) <= half),
        (dx <= 0.0) & (np.abs(dy) <= half),
        (dy >= 0.0) & (np.abs(dx) <= half),
        (dy <= 0.0) & (np.abs(dx) <= half),
    ]
    extents = [(nx - 1 - cx) * p, cx * p, (ny - 1 - cy) * p, cy * p]
    nbins = int(np.floor(min(extents) / p + 1e-12))
    if nbins < 1:
        raise ValueError("map too small relative to the imprint center")

    mean_h = np.zeros((4, nbins))
    mean_r = np.zeros((4, nbins))
    for k, band in enumerate(bands):
        rb = r[band]
        hb = h[band]
        idx = np.floor(rb / p).astype(int)
        keep = idx < nbins
        idx, rb, hb = idx[keep], rb[keep], hb[keep]
        counts = np.bincount(idx, minlength=nbins)
        if np.any(counts == 0):
            raise ValueError("empty strip bin: map too small for the imprint")
        mean_h[k] = np.bincount(idx, weights=hb, minlength=nbins) / counts
        mean_r[k] = np.bincount(idx, weights=rb, minlength=nbins) / counts

    return PileUpCurve(mean_r.mean(axis=0) / a, mean_h.mean(axis=0) / a)


# ---------------------------------------------------------------------------
# Pile-up features

def _clip_above(x, h, tau):
    """Sub-segments of the piecewise-linear curve where h >= tau.

    Returns a list of (x_nodes, h_nodes) runs with threshold-crossing
    points inserted by linear interpolation.
    """
    runs = []
    cur_x, cur_h = [], []

    def flush():
        if len(cur_x) >= 2:
            runs.append((np.array(cur_x), np.array(cur_h)))
        cur_x.clear()
        cur_h.clear()

    n = len(x)
    for i in range(n - 1):
        x0, x1 = x[i], x[i + 1]
        h0, h1 = h[i], h[i + 1]
        in0, in1 = h0 >= tau, h1 >= tau
        if in0 and not cur_x:
            cur_x.append(x0)
            cur_h.append(h0)
        if in0 and in1:
            cur_x.append(x1)
            cur_h.append(h1)
        elif in0 and not in1:
            t = (h0 - tau) / (h0 - h1)
            cur_x.append(x0 + t * (x1 - x0))
            cur_h.append(tau)
            flush()
        elif not in0 and in1:
            t = (tau - h0) / (h1 - h0)
            cur_x.append(x0 + t * (x1 - x0))
            cur_h.append(tau)
            cur_x.append(x1)
            cur_h.append(h1)
    flush()
    return runs


def extract_pileup_features(curve: PileUpCurve) -> PileUpFeatures:
    """Thresholded volumes and centers of the above-surface profile.

    For each threshold fraction t of the maximum height, the region
    where the curve lies at or above max(t·H_max, 0) (and above the
    surface) is integrated by the trapezoid rule with interpolated
    crossing points: V is the integral of ĥ, O the ĥ-weighted mean
    position.  A curve that never rises above the surface yields zero
    features and a warning.
    """
    if curve.xhat.size < 8:
        raise ValueError("pile-up curve needs at least 8 samples")
    x = curve.xhat
    h = curve.hhat
    H_max = float(np.max(h))
    if H_max <= 0.0:
        warnings.warn("no pile-up above the surface; features set to zero")
        return PileUpFeatures(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    out = []
    for frac in (0.0, 0.5, 0.75, 0.875):
        tau = max(frac * H_max, 0.0)
        V = 0.0
        M = 0.0
        for xs, hs in _clip_above(x, h, tau):
            V += float(np.trapezoid(hs, xs))
            M += float(np.trapezoid(xs * hs, xs))
        out.append((V, M / V if V > 0.0 else 0.0))

    (V1, O1), (Vh, Oh), (Vq, Oq), (Ve, Oe) = out
    return PileUpFeatures(H_max, V1, O1, Vh, Oh, Vq, Oq, Ve, Oe)


# ---------------------------------------------------------------------------
# Force features

def extract_force_features(lc: LoadCurve) -> ForceFeatures:
    """Loading curvature, initial unloading slope, residual depth ratio."""
    load = np.asarray(lc.loading, dtype=float)
    unload = np.asarray(lc.unloading, dtype=float)
    if load.shape[0] < 10 or unload.shape[0] < 10:
        raise ValueError("need at least 10 loading and unloading samples")
    hl, Pl = load[:, 0], load[:, 1]
    if np.any(np.diff(hl) < 0):
        raise ValueError("loading branch must be monotone in depth")

    denom = float(np.sum(hl**4))
    if denom <= 0.0:
        raise ValueError("degenerate loading branch")
    C = float(np.sum(Pl * hl**2)) / denom

    hu, Pu = unload[:, 0], unload[:, 1]
    top = Pu >= 0.9 * lc.P_max
    if np.count_nonzero(top) < 2:
        top = np.argsort(Pu)[-2:]  # fall back to the two highest loads
    hs, Ps = hu[top], Pu[top]
    hbar = hs.mean()
    S = float(np.sum((hs - hbar) * (Ps - Ps.mean())) / np.sum((hs - hbar) ** 2))

    h1, P1 = unload[-2]
    h2, P2 = unload[-1]
    if P2 == P1:
        h_r = h2
    else:
        h_r = h2 - P2 * (h2 - h1) / (P2 - P1)
    return ForceFeatures(C, S, float(h_r / lc.h_m))


# ---------------------------------------------------------------------------
# Hardness and assembly

def hardness(P: float, A: float) -> float:
    """Mean contact pressure: load over projected area."""
    if P <= 0.0 or A <= 0.0:
        raise ValueError("load and projected area must be positive")
    return P / A


FEATURE_NAMES_PILEUP = [
    "pileup_height_max",
    "volume_full", "center_full",
    "volume_half", "center_half",
    "volume_quarter", "center_quarter",
    "volume_eighth", "center_eighth",
]
FEATURE_NAMES_FORCE = ["loading_curvature", "unloading_slope", "residual_depth_ratio"]


def feature_names(with_force: bool) -> list:
    names = FEATURE_NAMES_PILEUP + ["hardness"]
    return names + FEATURE_NAMES_FORCE if with_force else names


def assemble_features(pf: PileUpFeatures, H: float,
                      ff: Optional[ForceFeatures] = None) -> np.ndarray:
    """Fixed-order feature vector: 9 pile-up values, hardness, then the
    3 force values when available (10 or 13 entries)."""
    vec = [pf.H_max, pf.V1, pf.O1, pf.V_half, pf.O_half,
           pf.V_quarter, pf.O_quarter, pf.V_eighth, pf.O_eighth, H]
    if ff is not None:
        vec += [ff.C, ff.S, ff.hr_over_hm]
    return np.array(vec, dtype=float)


# ---------------------------------------------------------------------------
# Map file I/O

def write_map(hmap: HeightMap, path: str) -> None:
    """Binary map file: magic, u32 nx, u32 ny, f64 pitch/a/cx/cy, then
    row-major f64 heights, all little-endian."""
    ny, nx = hmap.heights.shape
    cx, cy = hmap.center
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MAP_MAGIC, nx, ny))
        fh.write(struct.pack("<4d", hmap.pitch, hmap.a, cx, cy))
        fh.write(hmap.heights.astype("<f8").tobytes(order="C"))


def read_map(path: str) -> HeightMap:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != MAP_MAGIC:
            raise ValueError(f"not a height-map file: {path}")
        nx, ny = struct.unpack("<II", head[4:])
        pitch, a, cx, cy = struct.unpack("<4d", fh.read(32))
        data = np.frombuffer(fh.read(nx * ny * 8), dtype="<f8")
    if data.size != nx * ny:
        raise ValueError(f"truncated height-map file: {path}")
    return HeightMap(data.reshape(ny, nx).copy(), pitch, (cx, cy), a)


def map_from_csv(path: str) -> HeightMap:
    """CSV import: one header line nx,ny,pitch,a,cx,cy then ny rows of
    nx comma-separated heights."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split(",")
        if len(parts) != 6:
            raise ValueError("map CSV header must be nx,ny,pitch,a,cx,cy")
        nx, ny = int(parts[0]), int(parts[1])
        pitch, a, cx, cy = (float(v) for v in parts[2:])
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape != (ny, nx):
        raise ValueError(f"map CSV grid is {rows.shape}, header says {(ny, nx)}")
    return HeightMap(rows, pitch, (cx, cy), a)
