"""Constitutive laws, material sampling, and stress-strain curve handling.

Three material families share one curve interface:

* Hollomon: power-law hardening in total strain, continuous at yield.
* Ludwik: four-parameter law whose hardening depends on plastic strain;
  the plastic branch is implicit in total strain and is solved by
  bisection, which floors the stress at the yield value until the
  hardening branch crosses it.
* Point-stress: ten stress anchors on a geometric strain grid, linear
  in between; no functional form assumed.

Units: stress GPa, strain dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Sampling boxes for random material draws (GPa where dimensional).
HOLLOMON_BOX = {"E": (30.0, 300.0), "sigma_y": (0.05, 3.0), "n": (0.05, 0.5)}
LUDWIK_BOX = {"E": (30.0, 300.0), "sigma_y": (0.05, 1.0), "n": (0.1, 0.9), "K": (0.1, 2.0)}
POINTSTRESS_Q_RANGE = (1.1, 1.5)

STRAIN_CAP = 0.3
_BISECT_STEPS = 60  # 2^-60 of the bracket width is far below the 1e-12 target


@dataclass(frozen=True)
class HollomonParams:
    E: float
    sigma_y: float
    n: float


@dataclass(frozen=True)
class LudwikParams:
    E: float
    sigma_y: float
    n: float
    K: float


@dataclass(frozen=True)
class PointStressParams:
    """Anchor stresses sigmas[i] sit at strain nodes 2..10 of the geometric grid."""

    q: float
    E: float
    sigma_y: float
    sigmas: tuple


@dataclass(frozen=True)
class MaterialSpec:
    kind: str  # "hollomon" | "ludwik" | "pointstress"
    params: object


@dataclass
class StressStrainCurve:
    """Piecewise-linear curve; strains strictly increasing from 0."""

    strains: np.ndarray
    stresses: np.ndarray
    E: float
    sigma_y: float
    kind: str = "raw"

    def eval(self, strain):
        return np.interp(strain, self.strains, self.stresses)


def eval_hollomon(p: HollomonParams, strain):
    """Stress at total strain: E*eps below yield, E*eps_y^(1-n)*eps^n above."""
    eps = np.asarray(strain, dtype=float)
    if np.any(eps < 0):
        raise ValueError("strain must be non-negative")
    eps_y = p.sigma_y / p.E
    elastic = p.E * eps
    with np.errstate(invalid="ignore"):
        plastic = p.E * eps_y ** (1.0 - p.n) * np.where(eps > 0, eps, 1.0) ** p.n
    out = np.where(eps < eps_y, elastic, plastic)
    return out if out.ndim else float(out)


def eval_ludwik(p: LudwikParams, strain):
    """Stress at total strain for the Ludwik law.

    Elastic below yield.  Above, sigma solves sigma = K*(eps - sigma/E)^n
    by bisection on [sigma_y, K*eps^n + sigma_y] to 1e-12 absolute; when
    the root lies below sigma_y the bisection collapses onto the lower
    bracket end, i.e. the stress plateaus at sigma_y until the hardening
    branch crosses it.  That keeps the curve continuous at yield.
    """
    eps = np.atleast_1d(np.asarray(strain, dtype=float))
    if np.any(eps < 0):
        raise ValueError("strain must be non-negative")
    eps_y = p.sigma_y / p.E
    out = p.E * eps.copy()
    mask = eps >= eps_y
    if mask.any():
        e = eps[mask]
        lo = np.full_like(e, p.sigma_y)
        hi = p.K * e**p.n + p.sigma_y

        def residual(sig):
            ep = e - sig / p.E
            r = np.where(ep > 0, p.K * np.where(ep > 0, ep, 1.0) ** p.n - sig, -sig - 1.0)
            return r

        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            pos = residual(mid) > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        out[mask] = 0.5 * (lo + hi)
    out = out if np.asarray(strain).ndim else float(out[0])
    return out


def pointstress_strains(q: float, E: float, sigma_y: float) -> np.ndarray:
    """Ten strain nodes: eps1 = yield strain, eps10 = 0.3, gaps in geometric ratio q.

    First gap d = (0.3 - eps_y) * (q - 1) / (q^9 - 1); at q = 1 the grid is uniform.
    """
    eps_y = sigma_y / E
    if not eps_y < STRAIN_CAP:
        raise ValueError(f"yield strain {eps_y:.4g} must be below {STRAIN_CAP}")
    span = STRAIN_CAP - eps_y
    if q == 1.0:
        d1 = span / 9.0
    else:
        d1 = span * (q - 1.0) / (q**9 - 1.0)
    gaps = d1 * q ** np.arange(9)
    return eps_y + np.concatenate(([0.0], np.cumsum(gaps)))


def eval_pointstress(p: PointStressParams, strain):
    strains = pointstress_strains(p.q, p.E, p.sigma_y)
    stresses = np.concatenate(([p.sigma_y], np.asarray(p.sigmas, dtype=float)))
    nodes_e = np.concatenate(([0.0], strains))
    nodes_s = np.concatenate(([0.0], stresses))
    out = np.interp(strain, nodes_e, nodes_s)
    return out if np.asarray(strain).ndim else float(out)


def eval_material(spec: MaterialSpec, strain):
    if spec.kind == "hollomon":
        return eval_hollomon(spec.params, strain)
    if spec.kind == "ludwik":
        return eval_ludwik(spec.params, strain)
    if spec.kind == "pointstress":
        return eval_pointstress(spec.params, strain)
    raise ValueError(f"unknown material kind {spec.kind!r}")


def sample_material(kind: str, rng: np.random.Generator) -> MaterialSpec:
    """Uniform draw from the family's sampling box.

    Point-stress materials draw (E, sigma_y) from the Ludwik box, a grid
    ratio q in [1.1, 1.5], a first slope k2 ~ U(0.05E, E), and successive
    slope decay factors u ~ U(0.2, 0.95), so slopes stay positive and
    strictly decreasing and sigma_2 > sigma_y.
    """
    if kind == "hollomon":
        b = HOLLOMON_BOX
        return MaterialSpec(
            "hollomon",
            HollomonParams(
                E=rng.uniform(*b["E"]),
                sigma_y=rng.uniform(*b["sigma_y"]),
                n=rng.uniform(*b["n"]),
            ),
        )
    if kind == "ludwik":
        b = LUDWIK_BOX
        return MaterialSpec(
            "ludwik",
            LudwikParams(
                E=rng.uniform(*b["E"]),
                sigma_y=rng.uniform(*b["sigma_y"]),
                n=rng.uniform(*b["n"]),
                K=rng.uniform(*b["K"]),
            ),
        )
    if kind == "pointstress":
        b = LUDWIK_BOX
        q = rng.uniform(*POINTSTRESS_Q_RANGE)
        E = rng.uniform(*b["E"])
        sigma_y = rng.uniform(*b["sigma_y"])
        strains = pointstress_strains(q, E, sigma_y)
        slopes = np.empty(9)
        slopes[0] = rng.uniform(0.05 * E, E)
        for i in range(1, 9):
            slopes[i] = slopes[i - 1] * rng.uniform(0.2, 0.95)
        sigmas = sigma_y + np.cumsum(slopes * np.diff(strains))
        return MaterialSpec("pointstress", PointStressParams(q, E, sigma_y, tuple(sigmas)))
    raise ValueError(f"unknown material kind {kind!r}")


def to_curve(spec: MaterialSpec, strain_cap: float = STRAIN_CAP, samples: int = 200) -> StressStrainCurve:
    """Dense piecewise-linear curve with the yield point as an explicit node.

    Point-stress curves carry exactly the elastic segment plus the ten anchors.
    """
    p = spec.params
    eps_y = p.sigma_y / p.E
    if spec.kind == "pointstress":
        strains = np.concatenate(([0.0], pointstress_strains(p.q, p.E, p.sigma_y)))
        stresses = np.concatenate(([0.0, p.sigma_y], np.asarray(p.sigmas, dtype=float)))
    else:
        grid = np.linspace(0.0, strain_cap, samples)
        strains = np.unique(np.concatenate((grid, [eps_y])))
        strains = strains[strains <= strain_cap]
        stresses = np.asarray(eval_material(spec, strains), dtype=float)
    return StressStrainCurve(strains=strains, stresses=stresses, E=p.E, sigma_y=p.sigma_y, kind=spec.kind)


def pointwise_strain_grid(E: float, sigma_y: float) -> np.ndarray:
    """16 evaluation strains: 6 on [eps_y, eps_y+0.01], 10 on [eps_y+0.02, 0.2], ends inclusive."""
    eps_y = sigma_y / E
    if not eps_y + 0.02 < 0.2:
        raise ValueError(f"yield strain {eps_y:.4g} too large for the fixed strain grid")
    first = np.linspace(eps_y, eps_y + 0.01, 6)
    second = np.linspace(eps_y + 0.02, 0.2, 10)
    return np.concatenate((first, second))


# ---------------------------------------------------------------------------
# Least-squares fitting of Hollomon / Ludwik parameters to a curve


def _rel_residuals(pred: np.ndarray, obs: np.ndarray) -> np.ndarray:
    return (pred - obs) / np.maximum(np.abs(obs), 1e-9)


def _detect_elastic(strains, stresses):
    """Initial (E, sigma_y) from the leading straight segment of the data."""
    E0 = stresses[0] / strains[0]
    on_line = np.abs(stresses - E0 * strains) <= 1e-6 * np.abs(E0 * strains)
    if on_line.any():
        k = int(np.max(np.nonzero(on_line)[0]))
        sy0 = stresses[k]
    else:
        sy0 = stresses[0]
    return E0, sy0


def fit_model(curve: StressStrainCurve, kind: str):
    """Fit Hollomon or Ludwik parameters to the curve's points.

    Least squares on relative stress residuals, polished with BFGS from a
    log-log regression seed.  Returns (params, rms_relative_residual).
    A purely elastic curve leaves the hardening exponent at its seed value
    (it is unidentifiable); the residual still reports the fit quality.
    """
    from . import numopt

    if kind not in ("hollomon", "ludwik"):
        raise ValueError(f"cannot fit kind {kind!r}")
    m = curve.strains > 0
    strains = curve.strains[m]
    stresses = curve.stresses[m]
    E0, sy0 = _detect_elastic(strains, stresses)

    plastic = stresses > sy0 * (1.0 + 1e-6)
    n0, K0 = 0.3, max(stresses[-1], 0.1)
    if plastic.sum() >= 2:
        if kind == "hollomon":
            A = np.polyfit(np.log(strains[plastic]), np.log(stresses[plastic]), 1)
            n0 = float(np.clip(A[0], 0.01, 1.0))
        else:
            ep = strains[plastic] - stresses[plastic] / E0
            ok = ep > 1e-9
            if ok.sum() >= 2:
                A = np.polyfit(np.log(ep[ok]), np.log(stresses[plastic][ok]), 1)
                n0 = float(np.clip(A[0], 0.01, 1.2))
                K0 = float(np.exp(A[1]))

    if kind == "hollomon":
        x0 = np.log([E0, sy0, n0])
        bounds = np.log([[5.0, 1e-3, 0.01], [600.0, 6.0, 1.5]]).T

        def unpack(x):
            E, sy, n = np.exp(x)
            return HollomonParams(E, sy, n)

        def model(x):
            return eval_hollomon(unpack(x), strains)
    else:
        x0 = np.log([E0, sy0, n0, K0])
        bounds = np.log([[5.0, 1e-3, 0.01, 0.01], [600.0, 6.0, 1.5, 5.0]]).T

        def unpack(x):
            E, sy, n, K = np.exp(x)
            return LudwikParams(E, sy, n, K)

        def model(x):
            return eval_ludwik(unpack(x), strains)

    def objective(x):
        r = _rel_residuals(model(x), stresses)
        return float(np.mean(r * r))

    best = None
    for seed_n in (n0, 0.1, 0.5):
        start = x0.copy()
        start[2] = np.log(np.clip(seed_n, 0.02, 1.0))
        res = numopt.bfgs_minimize(
            numopt.OptProblem(objective=objective, x0=start, bounds=bounds)
        )
        if best is None or res.f_best < best.f_best:
            best = res
        if best.f_best < 1e-18:
            break
    rms = float(np.sqrt(best.f_best))
    return unpack(best.x_best), rms


# ---------------------------------------------------------------------------
# Serialization


def material_to_dict(spec: MaterialSpec) -> dict:
    p = spec.params
    if spec.kind == "pointstress":
        params = {"q": p.q, "E": p.E, "sigma_y": p.sigma_y, "sigmas": list(p.sigmas)}
    elif spec.kind == "ludwik":
        params = {"E": p.E, "sigma_y": p.sigma_y, "n": p.n, "K": p.K}
    else:
        params = {"E": p.E, "sigma_y": p.sigma_y, "n": p.n}
    return {"kind": spec.kind, "params": params}


def material_from_dict(d: dict) -> MaterialSpec:
    kind = d["kind"]
    p = d["params"]
    if kind == "hollomon":
        return MaterialSpec(kind, HollomonParams(p["E"], p["sigma_y"], p["n"]))
    if kind == "ludwik":
        return MaterialSpec(kind, LudwikParams(p["E"], p["sigma_y"], p["n"], p["K"]))
    if kind == "pointstress":
        return MaterialSpec(kind, PointStressParams(p["q"], p["E"], p["sigma_y"], tuple(p["sigmas"])))
    raise ValueError(f"unknown material kind {kind!r}")
