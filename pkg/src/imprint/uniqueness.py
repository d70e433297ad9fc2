"""Identifiability study for the four-parameter hardening law.

Builds a fast network emulator of the params-to-features map with an
active sampling loop, then hunts for "sibling" materials: distinct
parameter sets whose imprint features are nearly indistinguishable.
Sweeping a uniform parameter grid and counting how often a sibling
exists, per feature subset, quantifies which measurement combinations
actually pin the material down.

The quasi-Newton sibling search minimizes a smooth stand-in (p-norm,
p = 8) for the worst-case relative feature difference; every reported
ratio is re-verified against the analytic forward model rather than
the network, so the emulator only steers the search.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constitutive as con
from . import neural
from . import numopt
from .surrogate import SimSetting, SurrogateError, simulate_record

SMOOTH_MAX_P = 8.0

# Column layout of assemble_features with force features included.
FEATURE_SUBSETS: Dict[str, Tuple[int, ...]] = {
    "force+H": (9, 10, 11, 12),
    "pileup3+H": (0, 1, 2, 9),
    "pileup9+H": tuple(range(10)),
    "pileup9+force": tuple(range(9)) + (10, 11, 12),
}

_BOX = con.LUDWIK_BOX
_LO = np.array([_BOX[k][0] for k in ("E", "sigma_y", "n", "K")])
_HI = np.array([_BOX[k][1] for k in ("E", "sigma_y", "n", "K")])


def resolve_subset(subset) -> np.ndarray:
    if isinstance(subset, str):
        try:
            return np.array(FEATURE_SUBSETS[subset], dtype=int)
        except KeyError:
            raise ValueError(f"unknown feature subset {subset!r}") from None
    return np.asarray(subset, dtype=int)


def params_vector(p: con.LudwikParams) -> np.ndarray:
    return np.array([p.E, p.sigma_y, p.n, p.K])


def vector_params(v: np.ndarray) -> con.LudwikParams:
    return con.LudwikParams(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


def ludwik_grid(grid_n: int = 5) -> List[con.LudwikParams]:
    """Uniform grid over the hardening-law box, endpoints included."""
    axes = [np.linspace(lo, hi, grid_n) for lo, hi in zip(_LO, _HI)]
    out = []
    for E in axes[0]:
        for sy in axes[1]:
            for n in axes[2]:
                for K in axes[3]:
                    out.append(con.LudwikParams(E, sy, n, K))
    return out


def surrogate_features(p: con.LudwikParams, setting: SimSetting) -> np.ndarray:
    spec = con.MaterialSpec("ludwik", p)
    return simulate_record(spec, setting, seed=0).features


def encode_params(P: np.ndarray) -> np.ndarray:
    """Input encoding for the forward emulator.

    Wide-range parameters enter as logs, and the two flow stresses the
    contact model keys on (at strains 0.033 and 0.1) are appended.
    Both are cheap consequences of the constitutive law itself, and
    feeding them in spares the network from having to learn the yield
    plateau's kinks.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    probes = np.empty((P.shape[0], 2))
    for i, row in enumerate(P):
        probes[i] = con.eval_ludwik(vector_params(row), _PROBE_STRAINS)
    return np.column_stack([np.log(P[:, 0]), np.log(P[:, 1]), P[:, 2],
                            np.log(P[:, 3]), np.log(probes)])


_PROBE_STRAINS = np.array([0.033, 0.1])


@dataclass
class ForwardModel:
    """Network emulator of the params-to-features map.

    The network regresses log-features (all features are strictly
    positive, several span two decades), which keeps relative error
    uniform across their range, and reads the physics-informed input
    encoding of encode_params; predict() speaks plain parameters and
    features.
    """
    mlp: neural.Mlp
    n_data: int
    per_feature_mape: np.ndarray
    converged: bool
    rounds: List[dict] = field(default_factory=list)

    def predict(self, params: np.ndarray) -> np.ndarray:
        single = np.asarray(params).ndim == 1
        F = np.exp(neural.forward(self.mlp, encode_params(params)))
        return F[0] if single else F


@dataclass
class SiblingResult:
    target: con.LudwikParams
    candidate: con.LudwikParams
    rel_diffs: Optional[np.ndarray]
    ratio: float
    nn_ratio: float
    verified: bool
    consistent: bool
    converged: bool
    iterations: int


@dataclass
class NonUniqueCurve:
    label: str
    points: List[Tuple[float, float]]
    ratios: np.ndarray


def distinguishing_ratio(F, F_bar) -> float:
    """Worst-case relative feature difference between two materials."""
    F = np.asarray(F, dtype=float)
    F_bar = np.asarray(F_bar, dtype=float)
    if F.shape != F_bar.shape:
        raise ValueError("feature vectors must have equal length")
    if np.any(F == 0.0):
        raise ValueError("zero reference feature")
    return float(np.max(np.abs(F - F_bar) / np.abs(F)))


# ---------------------------------------------------------------------------
# Forward emulator with active sampling

def _dataset_arrays(records) -> Tuple[np.ndarray, np.ndarray]:
    if any(r["kind"] != "ludwik" for r in records):
        raise ValueError("forward emulator expects hardening-law records")
    X = np.array([[r["params"][k] for k in ("E", "sigma_y", "n", "K")]
                  for r in records])
    Y = np.array([r["features"] for r in records])
    return X, Y


def _cell_index(X: np.ndarray) -> np.ndarray:
    """Which of the 16 half-range cells each parameter row falls in."""
    mid = 0.5 * (_LO + _HI)
    bits = (X >= mid).astype(int)
    return bits @ (1 << np.arange(4))


def _sample_cell(cell: int, count: int, rng: np.random.Generator) -> np.ndarray:
    mid = 0.5 * (_LO + _HI)
    lo = _LO.copy()
    hi = _HI.copy()
    for axis in range(4):
        if (cell >> axis) & 1:
            lo[axis] = mid[axis]
        else:
            hi[axis] = mid[axis]
    return rng.uniform(lo, hi, size=(count, 4))


def train_forward_active(seed_data,
                         batch_add: int = 50,
                         target_mape: float = 0.02,
                         budget: int = 4000,
                         setting: Optional[SimSetting] = None,
                         cfg: Optional[neural.TrainConfig] = None,
                         val_grid_n: int = 5,
                         seed: int = 0) -> ForwardModel:
    """Grow a params-to-features emulator until every feature's grid
    MAPE is under target_mape or the sample budget runs out.

    Each round trains (warm-started) on the current pool, scores the
    uniform validation grid per feature, and adds batch_add fresh
    surrogate samples in the worst of the 16 half-range parameter
    cells.
    """
    records = list(getattr(seed_data, "records", seed_data))
    if len(records) < 500:
        raise ValueError("need at least 500 seed records")
    if setting is None:
        setting = SimSetting()
    X, Y = _dataset_arrays(records)

    grid = ludwik_grid(val_grid_n)
    Xg = np.array([params_vector(p) for p in grid])
    Yg = np.array([surrogate_features(p, setting) for p in grid])
    cells = _cell_index(Xg)

    if cfg is None:
        cfg = neural.TrainConfig(lr=1e-3, max_epochs=1200, patience=1200, seed=seed)
    Xe = encode_params(X)
    Xge = encode_params(Xg)
    logYg = np.log(Yg)
    net = neural.init_mlp(Xe.shape[1], Y.shape[1], cfg.seed)
    rounds: List[dict] = []
    converged = False
    round_no = 0
    while True:
        round_cfg = neural.TrainConfig(
            lr=cfg.lr, batch_size=cfg.batch_size,
            max_epochs=cfg.max_epochs if round_no == 0 else max(1, cfg.max_epochs // 4),
            patience=cfg.patience, seed=cfg.seed + round_no)
        net, _ = neural.train_adam(net, ((Xe, np.log(Y)), (Xge, logYg)),
                                   round_cfg)
        if cfg.max_epochs >= 8:
            anneal = neural.TrainConfig(
                lr=cfg.lr / 5.0, batch_size=cfg.batch_size,
                max_epochs=max(1, cfg.max_epochs // 8),
                patience=cfg.patience, seed=cfg.seed + 500 + round_no)
            net, _ = neural.train_adam(net, ((Xe, np.log(Y)), (Xge, logYg)),
                                       anneal)
        pred_g = np.exp(neural.forward(net, Xge))
        per_feat = neural.mape_columns(Yg, pred_g)
        worst = float(per_feat.max())
        rounds.append({"n_data": X.shape[0], "worst_mape": worst})
        if worst < target_mape:
            converged = True
            break
        if X.shape[0] + batch_add > budget:
            break

        errs = np.abs(pred_g - Yg) / np.abs(Yg)
        cell_scores = np.array([
            errs[cells == c].max() if np.any(cells == c) else 0.0
            for c in range(16)])
        worst_cell = int(cell_scores.argmax())
        rounds[-1]["cell"] = worst_cell
        rng = np.random.default_rng([seed, 7919, round_no])
        fresh = _sample_cell(worst_cell, batch_add, rng)
        newX, newY = [], []
        for row in fresh:
            try:
                newY.append(surrogate_features(vector_params(row), setting))
                newX.append(row)
            except SurrogateError:
                continue
        if newX:
            X = np.vstack([X, np.array(newX)])
            Y = np.vstack([Y, np.array(newY)])
            Xe = np.vstack([Xe, encode_params(np.array(newX))])
        round_no += 1

    if not converged and cfg.max_epochs >= 4:
        # final polish at reduced step sizes
        for shrink in (5.0, 25.0):
            polish = neural.TrainConfig(
                lr=cfg.lr / shrink, batch_size=cfg.batch_size,
                max_epochs=max(1, cfg.max_epochs // 2),
                patience=cfg.patience, seed=cfg.seed + 900 + int(shrink))
            net, _ = neural.train_adam(net, ((Xe, np.log(Y)), (Xge, logYg)),
                                       polish)
        per_feat = neural.mape_columns(Yg, np.exp(neural.forward(net, Xge)))
        worst = float(per_feat.max())
        rounds.append({"n_data": X.shape[0], "worst_mape": worst, "polish": True})
        converged = worst < target_mape

    return ForwardModel(net, int(X.shape[0]), per_feat, converged, rounds)


# ---------------------------------------------------------------------------
# Sibling search

def _smooth_max(r: np.ndarray) -> float:
    return float(np.sum(np.abs(r) ** SMOOTH_MAX_P) ** (1.0 / SMOOTH_MAX_P))


def sibling_search(target: con.LudwikParams,
                   fm: ForwardModel,
                   feature_subset,
                   stop_ratio: float = 0.01,
                   max_iter: int = 80,
                   restarts: int = 1,
                   seed: int = 0,
                   setting: Optional[SimSetting] = None,
                   start: Optional[con.LudwikParams] = None) -> SiblingResult:
    """Search the parameter box for a material whose subset features
    match the target's, then re-check the winner with the analytic
    forward model."""
    idx = resolve_subset(feature_subset)
    if setting is None:
        setting = SimSetting()
    t_vec = params_vector(target)
    z_t = (t_vec - _LO) / (_HI - _LO)
    Ft = fm.predict(t_vec)[idx]
    if np.any(Ft == 0.0):
        raise ValueError("target has a zero feature in the chosen subset")

    span = _HI - _LO

    def rel_diffs_nn(Z: np.ndarray) -> np.ndarray:
        P = _LO + np.atleast_2d(Z) * span
        F = fm.predict(P)[:, idx]
        return (F - Ft) / np.abs(Ft)

    def objective(z: np.ndarray) -> float:
        return _smooth_max(rel_diffs_nn(z)[0])

    def gradient(z: np.ndarray) -> np.ndarray:
        eps = 1e-6
        probes = np.repeat(z[None, :], 9, axis=0)
        for i in range(4):
            probes[1 + 2 * i, i] += eps
            probes[2 + 2 * i, i] -= eps
        R = rel_diffs_nn(probes)
        vals = np.sum(np.abs(R) ** SMOOTH_MAX_P, axis=1) ** (1.0 / SMOOTH_MAX_P)
        return (vals[1::2] - vals[2::2]) / (2.0 * eps)

    rng = np.random.default_rng([seed, 104729])
    bounds = np.column_stack([np.zeros(4), np.ones(4)])
    best = None
    best_iters = 0
    n_starts = 1 if start is not None else max(1, restarts)
    for attempt in range(n_starts):
        if start is not None:
            z0 = (params_vector(start) - _LO) / span
        else:
            z0 = rng.uniform(0.0, 1.0, size=4)
            for _ in range(100):
                if np.linalg.norm(z0 - z_t) >= 0.2:
                    break
                z0 = rng.uniform(0.0, 1.0, size=4)
        res = numopt.bfgs_minimize(
            numopt.OptProblem(objective, gradient, z0, bounds),
            max_iter=max_iter,
            stop_when=lambda z, fv: fv <= stop_ratio)
        if best is None or res.f_best < best.f_best:
            best = res
            best_iters = res.iterations
        if best.f_best <= stop_ratio:
            break

    cand = vector_params(_LO + best.x_best * span)
    nn_ratio = float(np.max(np.abs(rel_diffs_nn(best.x_best)[0])))
    try:
        F_true_t = surrogate_features(target, setting)[idx]
        F_true_c = surrogate_features(cand, setting)[idx]
        rel = np.abs(F_true_c - F_true_t) / np.abs(F_true_t)
        ratio = float(rel.max())
        verified = True
    except (SurrogateError, ValueError):
        rel, ratio, verified = None, float("inf"), False
    consistent = verified and ratio <= 2.0 * nn_ratio + 1e-6
    return SiblingResult(target, cand, rel, ratio, nn_ratio,
                         verified, consistent, best.converged, best_iters)


DEFAULT_THRESHOLDS = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05,
                      0.06, 0.07, 0.08, 0.09, 0.10)

_WORKER_STATE: dict = {}


def _sweep_worker(args):
    i, p = args
    fm = _WORKER_STATE["fm"]
    try:
        res = sibling_search(p, fm, _WORKER_STATE["subset"],
                             stop_ratio=_WORKER_STATE["stop_ratio"],
                             max_iter=_WORKER_STATE["max_iter"],
                             restarts=_WORKER_STATE["restarts"],
                             seed=_WORKER_STATE["seed"] + i,
                             setting=_WORKER_STATE["setting"])
    except (ValueError, FloatingPointError):
        return i, float("inf")
    return i, res.ratio


def _init_worker(state):
    _WORKER_STATE.update(state)


def default_jobs() -> int:
    env = os.environ.get("IMPRINT_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def nonunique_curve(fm: ForwardModel,
                    feature_subset,
                    grid_n: int = 5,
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                    stop_ratio: float = 0.01,
                    max_iter: int = 80,
                    restarts: int = 1,
                    seed: int = 0,
                    setting: Optional[SimSetting] = None,
                    n_jobs: Optional[int] = None) -> NonUniqueCurve:
    """Fraction of grid materials with a verified sibling below each
    distinguishing-ratio threshold.  Per-material failures count as
    having no sibling."""
    if setting is None:
        setting = SimSetting()
    grid = ludwik_grid(grid_n)
    label = feature_subset if isinstance(feature_subset, str) else "custom"
    state = {"fm": fm, "subset": feature_subset, "stop_ratio": stop_ratio,
             "max_iter": max_iter, "restarts": restarts, "seed": seed,
             "setting": setting}
    jobs = default_jobs() if n_jobs is None else max(1, n_jobs)
    ratios = np.full(len(grid), np.inf)
    if jobs > 1 and len(grid) > 1:
        import multiprocessing as mp
        with mp.Pool(jobs, initializer=_init_worker, initargs=(state,)) as pool:
            for i, r in pool.imap_unordered(_sweep_worker,
                                            list(enumerate(grid)), chunksize=8):
                ratios[i] = r
    else:
        _init_worker(state)
        for i, p in enumerate(grid):
            _, ratios[i] = _sweep_worker((i, p))
    points = [(float(t), float(np.count_nonzero(ratios < t) / len(grid)))
              for t in thresholds]
    return NonUniqueCurve(label, points, ratios)


def curve_to_csv_rows(curve: NonUniqueCurve) -> List[str]:
    rows = ["threshold,subset,nonunique_ratio"]
    for t, v in curve.points:
        rows.append(f"{t},{curve.label},{v}")
    return rows
