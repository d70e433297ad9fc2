"""Analytic indentation forward model with controllable fidelity.

Stands in for expensive contact simulations and physical measurements:
maps a stress-strain curve plus contact settings (Poisson's ratio,
friction) to pile-up profiles, load curves, height maps, and hardness.
Three fidelities with pinned systematic gaps:

  LO2D  axisymmetric conical model, 1D profile + load curve
  HI3D  fourfold pyramidal model, 2D height map, shifted amplitudes
  EXP   HI3D at a hidden contact setting plus measurement noise

All outputs are deterministic functions of (material, setting, seed);
the coefficients are a plausible desk-scale fiction, not calibrated
physics.  Units: µm, mN, GPa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import constitutive as con
from . import profile as pr

FIDELITY_LO = "LO2D"
FIDELITY_HI = "HI3D"
FIDELITY_EXP = "EXP"
FIDELITIES = (FIDELITY_LO, FIDELITY_HI, FIDELITY_EXP)

TAN_TIP = math.tan(math.radians(70.3))  # effective cone half-angle tangent

# fixed 2D→3D systematic gap
HI_AMP_GAIN = 1.10
HI_CURV_GAIN = 0.95

# contact setting used by the experiment emulator; the inverse pipeline
# treats it as unknown and must recover its neighborhood by calibration
HIDDEN_NU = 0.28
HIDDEN_MU = 0.08

N_PROFILE_SAMPLES = 256
N_LOAD_SAMPLES = 64
XHAT_MAX = 3.0


class SurrogateError(ValueError):
    """Material/setting combination outside the surrogate's validity."""


@dataclass(frozen=True)
class SimSetting:
    nu: float = 0.3
    mu: float = 0.15
    fidelity: str = FIDELITY_LO
    P_max: float = 0.5    # newtons
    grid_n: int = 129     # height-map resolution (HI3D/EXP), odd

    def __post_init__(self):
        if not 0.2 <= self.nu <= 0.4:
            raise ValueError("nu must lie in [0.2, 0.4]")
        if not 0.05 <= self.mu <= 0.25:
            raise ValueError("mu must lie in [0.05, 0.25]")
        if self.fidelity not in FIDELITIES:
            raise ValueError(f"unknown fidelity {self.fidelity!r}")
        if self.P_max <= 0.0:
            raise ValueError("P_max must be positive")
        if self.grid_n < 17 or self.grid_n % 2 == 0:
            raise ValueError("grid_n must be odd and at least 17")

    @property
    def P_max_mN(self) -> float:
        return self.P_max * 1000.0


@dataclass
class SimRecord:
    spec: con.MaterialSpec
    setting: SimSetting
    features: np.ndarray
    hardness: float
    seed: int
    curve: Optional[pr.PileUpCurve] = None
    hmap: Optional[pr.HeightMap] = None
    load: Optional[pr.LoadCurve] = None


@dataclass(frozen=True)
class _Core:
    """Scalar state shared by every output of one forward evaluation."""

    sigma_r: float
    Estar: float
    C: float
    h_m: float
    n_eff: float
    a: float
    h_r: float
    S: float
    A_p: float
    w: float


def _core(curve: con.StressStrainCurve, nu: float, mu: float, P_mN: float,
          amp_gain: float = 1.0, curv_gain: float = 1.0) -> _Core:
    sigma_r = float(curve.eval(0.033))
    if sigma_r <= 0.0:
        raise SurrogateError("representative stress must be positive")
    Estar = curve.E / (1.0 - nu * nu)
    lam = math.log(Estar / sigma_r)
    if not 1.0 < lam < 12.0:
        raise SurrogateError(f"stiffness-to-strength ratio out of range (ln = {lam:.3f})")
    C = sigma_r * (-1.131 * lam**3 + 13.635 * lam**2 - 30.594 * lam + 29.267)
    C *= curv_gain
    if C <= 0.0:
        raise SurrogateError("nonpositive loading curvature")
    h_m = math.sqrt(P_mN / C)

    sig_hi = float(curve.eval(0.1))
    n_eff = (math.log(sig_hi) - math.log(sigma_r)) / (math.log(0.1) - math.log(0.033))
    n_eff = min(max(n_eff, 0.0), 1.0)

    a = h_m * TAN_TIP * (1.0 + 0.2 * (1.0 - n_eff))
    h_r = max(0.0, 1.0 - 5.0 * math.sqrt(sigma_r / Estar)) * h_m
    S = 2.0 * Estar * a

    base = 0.05 + 0.45 * (1.0 - n_eff) * (1.0 - min(1.0, 20.0 * curve.sigma_y / curve.E))
    A_p = min(max(base, 0.0), 0.5)
    A_p *= (1.0 - 0.8 * (mu - 0.15)) * (1.0 + 1.2 * (nu - 0.3)) * amp_gain
    w = 0.25 + 0.15 * n_eff
    return _Core(sigma_r, Estar, C, h_m, n_eff, a, h_r, S, A_p, w)


def _profile_hhat(core: _Core, xhat: np.ndarray) -> np.ndarray:
    crater = -core.h_r * np.maximum(0.0, 1.0 - xhat)
    pile = core.h_m * core.A_p * np.exp(-(((xhat - 1.15) / core.w) ** 2))
    return (crater + pile) / core.a


def _load_curve(core: _Core, P_mN: float) -> pr.LoadCurve:
    h_load = np.linspace(0.0, core.h_m, N_LOAD_SAMPLES)
    loading = np.column_stack([h_load, core.C * h_load**2])
    m = core.S * (core.h_m - core.h_r) / P_mN
    u = np.linspace(1.0, 0.0, N_LOAD_SAMPLES)
    h_unload = core.h_r + u * (core.h_m - core.h_r)
    unloading = np.column_stack([h_unload, P_mN * u**m])
    return pr.LoadCurve(loading, unloading, P_mN, core.h_m)


def _mu_nu_hardness_factor(nu: float, mu: float) -> float:
    return (1.0 + 0.25 * mu) * (1.0 - 0.2 * (nu - 0.3))


def simulate_lo(curve: con.StressStrainCurve,
                setting: SimSetting) -> Tuple[pr.PileUpCurve, pr.LoadCurve, float]:
    """Axisymmetric forward model: normalized residual profile, load
    curve, and hardness from the projected circular contact."""
    if setting.fidelity != FIDELITY_LO:
        raise ValueError("simulate_lo requires a LO2D setting")
    P = setting.P_max_mN
    core = _core(curve, setting.nu, setting.mu, P)
    xhat = np.linspace(0.0, XHAT_MAX, N_PROFILE_SAMPLES)
    prof = pr.PileUpCurve(xhat, _profile_hhat(core, xhat))
    H = (P / (math.pi * core.a**2)) * _mu_nu_hardness_factor(setting.nu, setting.mu)
    return prof, _load_curve(core, P), H


def simulate_hi(curve: con.StressStrainCurve, setting: SimSetting,
                aniso_radius: float = 0.12,
                aniso_height: float = 0.10) -> Tuple[pr.HeightMap, pr.LoadCurve, float]:
    """Fourfold-symmetric forward model producing a height map.

    The radial profile is the LO2D one with a fixed systematic gap
    (pile-up amplitude ×1.10, loading curvature ×0.95), evaluated at a
    direction-dependent effective radius; the pile-up term is also
    amplitude-modulated with the same fourfold harmonic.  Hardness uses
    the pyramidal projected area 2a².  The anisotropy coefficients are
    exposed so tests can switch the fourfold terms off.
    """
    if setting.fidelity not in (FIDELITY_HI, FIDELITY_EXP):
        raise ValueError("simulate_hi requires a HI3D or EXP setting")
    P = setting.P_max_mN
    core = _core(curve, setting.nu, setting.mu, P,
                 amp_gain=HI_AMP_GAIN, curv_gain=HI_CURV_GAIN)

    n = setting.grid_n
    c = (n - 1) / 2.0
    pitch = 6.0 * core.a / (n - 1)
    coord = (np.arange(n) - c) * pitch
    X, Y = np.meshgrid(coord, coord)
    r = np.hypot(X, Y)
    cos4 = np.cos(4.0 * np.arctan2(Y, X))
    r_eff = r / (1.0 + aniso_radius * cos4)
    xhat = r_eff / core.a
    crater = -core.h_r * np.maximum(0.0, 1.0 - xhat)
    pile = (core.h_m * core.A_p * np.exp(-(((xhat - 1.15) / core.w) ** 2))
            * (1.0 + aniso_height * cos4))
    hmap = pr.HeightMap(crater + pile, pitch, (c, c), core.a)

    H = (P / (2.0 * core.a**2)) * _mu_nu_hardness_factor(setting.nu, setting.mu)
    return hmap, _load_curve(core, P), H


def _smooth3(arr: np.ndarray) -> np.ndarray:
    """3×3 mean filter with edge padding."""
    p = np.pad(arr, 1, mode="edge")
    out = np.zeros_like(arr)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out += p[dy:dy + arr.shape[0], dx:dx + arr.shape[1]]
    return out / 9.0


def emulate_experiment(curve: con.StressStrainCurve, rng: np.random.Generator,
                       setting: Optional[SimSetting] = None,
                       noise: bool = True) -> Tuple[pr.HeightMap, float]:
    """Measurement emulator: HI3D physics at a fixed concealed contact
    setting, plus smoothed surface roughness and hardness jitter.

    Draw order is pinned (roughness field first, then the hardness
    factor) so replicates are seed-reproducible.  With noise disabled
    this is exactly the clean forward model at the concealed setting.
    """
    if setting is None:
        setting = SimSetting(fidelity=FIDELITY_EXP)
    hidden = SimSetting(nu=HIDDEN_NU, mu=HIDDEN_MU, fidelity=FIDELITY_EXP,
                        P_max=setting.P_max, grid_n=setting.grid_n)
    hmap, lc, H = simulate_hi(curve, hidden)
    if not noise:
        return hmap, H
    rough = rng.normal(0.0, 0.01 * lc.h_m, size=hmap.heights.shape)
    heights = hmap.heights + _smooth3(rough)
    H_noisy = H * rng.uniform(0.98, 1.02)
    return pr.HeightMap(heights, hmap.pitch, hmap.center, hmap.a), H_noisy


# ---------------------------------------------------------------------------
# Record/dataset generation

def simulate_record(spec: con.MaterialSpec, setting: SimSetting, seed: int,
                    noise_rng: Optional[np.random.Generator] = None,
                    keep_raw: bool = False) -> SimRecord:
    """Forward-model one material into its feature vector."""
    curve = con.to_curve(spec)
    if setting.fidelity == FIDELITY_LO:
        prof, lc, H = simulate_lo(curve, setting)
        pf = pr.extract_pileup_features(prof)
        ff = pr.extract_force_features(lc)
        feats = pr.assemble_features(pf, H, ff)
        return SimRecord(spec, setting, feats, H, seed,
                         curve=prof if keep_raw else None,
                         load=lc if keep_raw else None)
    if setting.fidelity == FIDELITY_HI:
        hmap, lc, H = simulate_hi(curve, setting)
        pf = pr.extract_pileup_features(pr.strip_average(hmap))
        ff = pr.extract_force_features(lc)
        feats = pr.assemble_features(pf, H, ff)
        return SimRecord(spec, setting, feats, H, seed,
                         hmap=hmap if keep_raw else None,
                         load=lc if keep_raw else None)
    # EXP: no load curve is observable, so only 10 features
    rng = noise_rng if noise_rng is not None else np.random.default_rng(seed)
    hmap, H = emulate_experiment(curve, rng, setting)
    pf = pr.extract_pileup_features(pr.strip_average(hmap))
    feats = pr.assemble_features(pf, H)
    return SimRecord(spec, setting, feats, H, seed,
                     hmap=hmap if keep_raw else None)


@dataclass
class Dataset:
    records: list = field(default_factory=list)
    skips: int = 0


def record_to_dict(rid: str, rec: SimRecord) -> dict:
    exp = rec.setting.fidelity == FIDELITY_EXP
    params = con.material_to_dict(rec.spec)["params"]
    return {
        "id": rid,
        "fidelity": rec.setting.fidelity,
        "nu": None if exp else rec.setting.nu,
        "mu": None if exp else rec.setting.mu,
        "kind": rec.spec.kind,
        "params": params,
        "features": [float(v) for v in rec.features],
        "hardness": float(rec.hardness),
        "targets": dict(params),
        "seed": rec.seed,
    }


_REDRAW_STRIDE = 10_000_000
_MAX_REDRAWS = 50


def _draw_material(kind: str, seed: int,
                   setting: SimSetting) -> Tuple[con.MaterialSpec, int, int]:
    """Sample a material, redrawing deterministically past surrogate
    domain errors; returns (spec, seed_used, skip_count).  Validity is
    probed with the same contact parameters the record will use."""
    if setting.fidelity == FIDELITY_LO:
        nu, mu, amp, curv = setting.nu, setting.mu, 1.0, 1.0
    elif setting.fidelity == FIDELITY_HI:
        nu, mu, amp, curv = setting.nu, setting.mu, HI_AMP_GAIN, HI_CURV_GAIN
    else:
        nu, mu, amp, curv = HIDDEN_NU, HIDDEN_MU, HI_AMP_GAIN, HI_CURV_GAIN
    for attempt in range(_MAX_REDRAWS):
        s = seed + attempt * _REDRAW_STRIDE
        spec = con.sample_material(kind, np.random.default_rng(s))
        try:
            _core(con.to_curve(spec), nu, mu, setting.P_max_mN,
                  amp_gain=amp, curv_gain=curv)
        except SurrogateError:
            continue
        return spec, s, attempt
    raise SurrogateError(f"could not draw a valid {kind} material near seed {seed}")


def gen_dataset(kind_mix: dict, setting: SimSetting, base_seed: int,
                replicates: int = 1, map_dir: Optional[str] = None) -> Dataset:
    """Generate a dataset of forward-model records.

    kind_mix maps material kind to count, in iteration order.  Record i
    draws its material from base_seed + i.  For the EXP fidelity each
    material is measured `replicates` times, replicate j of material k
    using noise seed base_seed + 100000 + k·replicates + j.  Materials
    the surrogate rejects are skipped and redrawn deterministically;
    the skip count is reported on the dataset.
    """
    import os

    for kind, count in kind_mix.items():
        if count < 1:
            raise ValueError(f"count for {kind} must be at least 1")
    ds = Dataset()
    kinds = [k for k, cnt in kind_mix.items() for _ in range(cnt)]

    if setting.fidelity == FIDELITY_EXP:
        for k, kind in enumerate(kinds):
            spec, _, skipped = _draw_material(kind, base_seed + k, setting)
            ds.skips += skipped
            for j in range(replicates):
                noise_seed = base_seed + 100000 + k * replicates + j
                rng = np.random.default_rng(noise_seed)
                rec = simulate_record(spec, setting, noise_seed, noise_rng=rng,
                                      keep_raw=map_dir is not None)
                rid = f"exp-{k:03d}-r{j}"
                ds.records.append(record_to_dict(rid, rec))
                if map_dir is not None:
                    pr.write_map(rec.hmap, os.path.join(map_dir, f"{rid}.imp"))
        return ds

    for i, kind in enumerate(kinds):
        spec, seed_used, skipped = _draw_material(kind, base_seed + i, setting)
        ds.skips += skipped
        rec = simulate_record(spec, setting, seed_used,
                              keep_raw=map_dir is not None)
        rid = f"{setting.fidelity.lower()}-{i:05d}"
        ds.records.append(record_to_dict(rid, rec))
        if map_dir is not None and rec.hmap is not None:
            pr.write_map(rec.hmap, os.path.join(map_dir, f"{rid}.imp"))
    return ds


def save_jsonl(ds: Dataset, path: str) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for rec in ds.records:
            fh.write(json.dumps(rec) + "\n")


def load_jsonl(path: str) -> Dataset:
    import json

    ds = Dataset()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                ds.records.append(json.loads(line))
    return ds
