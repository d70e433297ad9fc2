"""Multi-fidelity inversion pipeline.

Chains three data tiers into one predictor of material parameters (or
pointwise stress curves) from imprint features:

  1. a base inverse model trained on plentiful low-fidelity records,
  2. a transfer head for high-fidelity records that receives the base
     model's prediction as an extra input and learns multiplicative
     corrections to it,
  3. a committee of transfer heads built at different contact settings
     (Poisson ratio, friction), blended with the base and sim-only
     predictions through learned convex weights and calibrated on a
     handful of experimental materials.

The committee combination is
    Y4 = a1*Y1 + a2*Y2 + (1 - a1 - a2)*Y3bar
with a1 = sigmoid(p1) and a2 = (1 - a1)*sigmoid(p2), so all three
coefficients stay positive, and Y3bar a softmax-weighted mean of the
member predictions.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constitutive as con
from . import neural
from . import numopt
from .surrogate import SimSetting, gen_dataset

N_IMPRINT_FEATURES = 10
PARAM_NAMES = ("E", "sigma_y", "n", "K")
DEFAULT_NU_GRID = (0.2, 0.3, 0.4)
DEFAULT_MU_GRID = (0.05, 0.15, 0.25)
COMMITTEE_VERSION = 1

_PARAM_LO = np.array([con.LUDWIK_BOX[k][0] for k in PARAM_NAMES])
_PARAM_HI = np.array([con.LUDWIK_BOX[k][1] for k in PARAM_NAMES])


def record_features(rec: dict) -> np.ndarray:
    """The 10 imprint features (pile-up set plus hardness) of a record."""
    return np.asarray(rec["features"][:N_IMPRINT_FEATURES], dtype=float)


def record_spec(rec: dict) -> con.MaterialSpec:
    return con.material_from_dict({"kind": rec["kind"], "params": rec["params"]})


def pointwise_targets(rec: dict) -> np.ndarray:
    """Stiffness, yield stress, and the 16 grid stresses of a record's
    true curve."""
    spec = record_spec(rec)
    E = float(rec["params"]["E"])
    sy = float(rec["params"]["sigma_y"])
    grid = con.pointwise_strain_grid(E, sy)
    return np.concatenate([[E, sy], con.eval_material(spec, grid)])


def param_targets(rec: dict) -> np.ndarray:
    t = rec["targets"]
    if any(k not in t for k in PARAM_NAMES):
        raise ValueError("parameter targets need four-parameter hardening "
                         f"records, got kind {rec.get('kind')!r}")
    return np.array([t[k] for k in PARAM_NAMES])


def dataset_xy(records: Sequence[dict], target_mode: str = "params"):
    X = np.array([record_features(r) for r in records])
    if target_mode == "params":
        Y = np.array([param_targets(r) for r in records])
    elif target_mode == "pointwise":
        Y = np.array([pointwise_targets(r) for r in records])
    else:
        raise ValueError(f"unknown target mode {target_mode!r}")
    return X, Y


# ---------------------------------------------------------------------------
# Base inverse model

@dataclass
class BaseModel:
    mlp: neural.Mlp
    target_mode: str
    val_mape: np.ndarray  # per target


DEFAULT_BASE_CFG = neural.TrainConfig(lr=1e-3, batch_size=64,
                                      max_epochs=1500, patience=1500, seed=0)


def split_records(records: Sequence[dict], val_frac: float = 0.125):
    cut = len(records) - max(1, int(round(val_frac * len(records))))
    return list(records[:cut]), list(records[cut:])


def _fit_with_polish(net: neural.Mlp, data, cfg: neural.TrainConfig):
    """Main Adam run, then two fine-tuning passes at lr/5 and lr/25.

    Fixed-lr training plateaus at a noise floor well above the reachable
    minimum; the reduced-step passes recover another 20-30% of
    validation error.  Skipped for tiny budgets (under 8 epochs)."""
    net, _ = neural.train_adam(net, data, cfg)
    if cfg.max_epochs >= 8:
        for i, shrink in enumerate((5.0, 25.0)):
            polish = neural.TrainConfig(
                lr=cfg.lr / shrink, batch_size=cfg.batch_size,
                max_epochs=max(1, 2 * cfg.max_epochs // (3 + 2 * i)),
                patience=cfg.patience, seed=cfg.seed + 60 + i)
            net, _ = neural.train_adam(net, data, polish)
    return net


def train_base(lo_dataset, cfg: Optional[neural.TrainConfig] = None,
               target_mode: str = "params") -> BaseModel:
    """Inverse model features -> targets on low-fidelity records."""
    records = list(getattr(lo_dataset, "records", lo_dataset))
    if len(records) < 1000:
        raise ValueError("need at least 1000 low-fidelity records")
    if cfg is None:
        cfg = DEFAULT_BASE_CFG
    train, val = split_records(records)
    Xt, Yt = dataset_xy(train, target_mode)
    Xv, Yv = dataset_xy(val, target_mode)
    mlp = neural.init_mlp(Xt.shape[1], Yt.shape[1], cfg.seed)
    mlp = _fit_with_polish(mlp, ((Xt, Yt), (Xv, Yv)), cfg)
    vm = neural.mape_columns(Yv, neural.forward(mlp, Xv))
    return BaseModel(mlp, target_mode, vm)


# ---------------------------------------------------------------------------
# Transfer head

@dataclass
class TransferModel:
    base: BaseModel
    head: neural.Mlp
    use_base_pred: bool
    val_mape: np.ndarray


DEFAULT_HEAD_CFG = neural.TrainConfig(lr=1e-3, batch_size=16,
                                      max_epochs=1500, patience=250, seed=0)


def _anchor_pred(base: BaseModel, X: np.ndarray) -> np.ndarray:
    """Base prediction clipped into the base net's own target range.

    The clip keeps the anchor positive and bounded away from zero, so
    it is safe both as a head input and as the denominator of the
    correction factors the head learns."""
    Y1 = neural.forward(base.mlp, X)
    return np.clip(Y1, base.mlp.target_lo, base.mlp.target_hi)


def _head_inputs(base: BaseModel, X: np.ndarray, use_base_pred: bool) -> np.ndarray:
    if not use_base_pred:
        return X
    return np.hstack([X, _anchor_pred(base, X)])


def transfer_hi(base: BaseModel, hi_records: Sequence[dict],
                val_records: Optional[Sequence[dict]] = None,
                merged_exp: Optional[Sequence[dict]] = None,
                cfg: Optional[neural.TrainConfig] = None,
                use_base_pred: bool = True) -> TransferModel:
    """Train a high-fidelity head whose input is the feature vector
    with the base model's prediction appended.  The augmented head
    learns multiplicative corrections to that prediction rather than
    the targets themselves, so with very few records it falls back to
    roughly reproducing the base output instead of guessing absolute
    scales from scratch.  Experimental records (with known targets)
    may be merged into the training set."""
    hi_records = list(hi_records)
    if not hi_records:
        raise ValueError("high-fidelity dataset is empty")
    if cfg is None:
        cfg = DEFAULT_HEAD_CFG
    train = hi_records + (list(merged_exp) if merged_exp else [])
    if val_records is None:
        train, val = split_records(train)
    else:
        val = list(val_records)
    Xt, Yt = dataset_xy(train, base.target_mode)
    Xv, Yv = dataset_xy(val, base.target_mode)
    Ht = _head_inputs(base, Xt, use_base_pred)
    Hv = _head_inputs(base, Xv, use_base_pred)
    if use_base_pred:
        At = _anchor_pred(base, Xt)
        Av = _anchor_pred(base, Xv)
        Tt, Tv = Yt / At, Yv / Av
    else:
        Av = 1.0
        Tt, Tv = Yt, Yv
    head = neural.init_mlp(Ht.shape[1], Yt.shape[1], cfg.seed)
    head, _ = neural.train_adam(head, ((Ht, Tt), (Hv, Tv)), cfg)
    vm = neural.mape_columns(Yv, Av * neural.forward(head, Hv))
    return TransferModel(base, head, use_base_pred, vm)


def predict_transfer(tm: TransferModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = neural.forward(tm.head, _head_inputs(tm.base, X, tm.use_base_pred))
    if tm.use_base_pred:
        out = _anchor_pred(tm.base, X) * out
    return out


# ---------------------------------------------------------------------------
# Contact-setting grid scan

def grid_gap_scan(cal_specs: Sequence[con.MaterialSpec],
                  exp_feature_means: Sequence[np.ndarray],
                  nu_grid: Sequence[float] = DEFAULT_NU_GRID,
                  mu_grid: Sequence[float] = DEFAULT_MU_GRID,
                  setting: Optional[SimSetting] = None) -> List[Tuple[float, float, float]]:
    """Score each (nu, mu) grid setting by how closely simulating the
    calibration materials reproduces their measured features; returns
    (nu, mu, score) sorted best first."""
    from .surrogate import simulate_record

    if len(cal_specs) < 1 or len(cal_specs) != len(exp_feature_means):
        raise ValueError("need matching calibration specs and feature means")
    base = setting if setting is not None else SimSetting()
    ranked = []
    for nu in nu_grid:
        for mu in mu_grid:
            s = SimSetting(nu=nu, mu=mu, fidelity="HI3D",
                           P_max=base.P_max, grid_n=base.grid_n)
            total = 0.0
            for spec, f_exp in zip(cal_specs, exp_feature_means):
                f_exp = np.asarray(f_exp, dtype=float)
                f_sim = simulate_record(spec, s, seed=0).features[:N_IMPRINT_FEATURES]
                total += float(np.mean(np.abs(f_sim - f_exp) / np.abs(f_exp)))
            ranked.append((nu, mu, total / len(cal_specs)))
    ranked.sort(key=lambda t: t[2])
    return ranked


# ---------------------------------------------------------------------------
# Committee

@dataclass
class CommitteePredictor:
    base: BaseModel
    sim_only: TransferModel
    members: List[TransferModel]
    settings: List[Tuple[float, float]]
    a1: float
    a2: float
    logits: np.ndarray

    @property
    def alpha1(self) -> float:
        return _sigmoid(self.a1)

    @property
    def alpha2(self) -> float:
        return (1.0 - self.alpha1) * _sigmoid(self.a2)

    @property
    def member_weights(self) -> np.ndarray:
        return _softmax(self.logits)


def _sigmoid(x: float) -> float:
    return float(np.exp(-np.logaddexp(0.0, -x)))


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / e.sum()


def combine_sources(alpha1: float, alpha2: float, Y1, Y2, Y3bar):
    """The committee blend: convex mix of base, sim-only, and member
    mean predictions."""
    return alpha1 * np.asarray(Y1) + alpha2 * np.asarray(Y2) \
        + (1.0 - alpha1 - alpha2) * np.asarray(Y3bar)


def _committee_sources(cp_like, X: np.ndarray):
    base, sim_only, members = cp_like
    Y1 = neural.forward(base.mlp, X)
    Y2 = predict_transfer(sim_only, X)
    Y3s = np.stack([predict_transfer(m, X) for m in members])
    return Y1, Y2, Y3s


def predict(cp: CommitteePredictor, features) -> np.ndarray:
    """Committee prediction for one feature vector or a batch."""
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    Y1, Y2, Y3s = _committee_sources((cp.base, cp.sim_only, cp.members), X)
    Y3bar = np.tensordot(cp.member_weights, Y3s, axes=(0, 0))
    out = combine_sources(cp.alpha1, cp.alpha2, Y1, Y2, Y3bar)
    return out[0] if single else out


def fit_committee(members: Sequence[TransferModel], base: BaseModel,
                  sim_only: TransferModel, exp_train: Sequence[dict],
                  settings: Optional[Sequence[Tuple[float, float]]] = None,
                  restarts_extra: int = 2, seed: int = 0) -> CommitteePredictor:
    """Learn the blend parameters by quasi-Newton descent on the
    box-scaled squared target error over the calibration records.
    Multi-start covers each pure source so the committee cannot end up
    worse than its best constituent."""
    members = list(members)
    exp_train = list(exp_train)
    if not exp_train:
        raise ValueError("need at least one calibration record")
    X, T = dataset_xy(exp_train, base.target_mode)
    Y1, Y2, Y3s = _committee_sources((base, sim_only, members), X)
    if base.target_mode == "params":
        scale = _PARAM_HI - _PARAM_LO
    else:
        scale = np.maximum(T.max(axis=0) - T.min(axis=0), 1e-9)
    k = len(members)

    def objective(theta: np.ndarray) -> float:
        a1 = _sigmoid(theta[0])
        a2 = (1.0 - a1) * _sigmoid(theta[1])
        w = _softmax(theta[2:])
        Y3bar = np.tensordot(w, Y3s, axes=(0, 0))
        resid = (combine_sources(a1, a2, Y1, Y2, Y3bar) - T) / scale
        return float(np.mean(resid * resid))

    starts = [np.zeros(2 + k)]
    corner = 8.0
    starts.append(np.concatenate([[corner, 0.0], np.zeros(k)]))      # ~pure Y1
    starts.append(np.concatenate([[-corner, corner], np.zeros(k)]))  # ~pure Y2
    for i in range(k):                                               # ~pure member i
        v = np.concatenate([[-corner, -corner], np.zeros(k)])
        v[2 + i] = corner
        starts.append(v)
    rng = np.random.default_rng(seed)
    for _ in range(restarts_extra):
        starts.append(rng.normal(scale=2.0, size=2 + k))

    best = None
    for x0 in starts:
        try:
            res = numopt.bfgs_minimize(
                numopt.OptProblem(objective, None, x0), max_iter=300)
        except ValueError:
            continue
        if best is None or res.f_best < best.f_best:
            best = res
    if best is None:
        warnings.warn("committee weight fit failed; using equal weights")
        theta = np.concatenate([[-np.log(2.0), 0.0], np.zeros(k)])
    else:
        theta = best.x_best
    return CommitteePredictor(base, sim_only, members,
                              list(settings) if settings else [],
                              float(theta[0]), float(theta[1]),
                              np.asarray(theta[2:], dtype=float))


# ---------------------------------------------------------------------------
# Experimental calibration workflow

def group_exp_records(exp_records: Sequence[dict]) -> Dict[int, List[dict]]:
    """Replicate records keyed by material index (from ids like
    exp-007-r3)."""
    groups: Dict[int, List[dict]] = {}
    for rec in exp_records:
        k = int(rec["id"].split("-")[1])
        groups.setdefault(k, []).append(rec)
    return groups


def material_feature_means(groups: Dict[int, List[dict]]) -> Dict[int, np.ndarray]:
    return {k: np.mean([record_features(r) for r in recs], axis=0)
            for k, recs in sorted(groups.items())}


@dataclass
class CalibrationReport:
    committee: CommitteePredictor
    scan: List[Tuple[float, float, float]]
    cal_ids: List[int]
    test_ids: List[int]


def calibrate_committee(base: BaseModel,
                        hi_train: Sequence[dict],
                        hi_val: Sequence[dict],
                        exp_records: Sequence[dict],
                        n_cal: int = 3,
                        replicates: int = 4,
                        head_cfg: Optional[neural.TrainConfig] = None,
                        member_hi_count: int = 150,
                        member_seed: int = 500_000,
                        setting: Optional[SimSetting] = None) -> CalibrationReport:
    """Three-shot calibration: scan the contact grid with the first
    n_cal materials, train committee members at the top settings on
    fresh high-fidelity data merged with the calibration replicates,
    and fit the blend weights on those same replicates."""
    if not 1 <= n_cal <= 3:
        raise ValueError("calibration materials must number 1..3")
    if not 1 <= replicates <= 8:
        raise ValueError("replicates per material must be 1..8")
    if setting is None:
        setting = SimSetting()
    groups = group_exp_records(exp_records)
    ids = sorted(groups)
    cal_ids, test_ids = ids[:n_cal], ids[n_cal:]
    cal_records = [r for k in cal_ids for r in groups[k][:replicates]]
    cal_specs = [record_spec(groups[k][0]) for k in cal_ids]
    means = material_feature_means({k: groups[k][:replicates] for k in cal_ids})
    scan = grid_gap_scan(cal_specs, [means[k] for k in cal_ids], setting=setting)
    top = [(nu, mu) for nu, mu, _ in scan[:3]]

    sim_only = transfer_hi(base, hi_train, hi_val, cfg=head_cfg)
    members = []
    for i, (nu, mu) in enumerate(top):
        s = SimSetting(nu=nu, mu=mu, fidelity="HI3D",
                       P_max=setting.P_max, grid_n=setting.grid_n)
        ds = gen_dataset({"ludwik": member_hi_count}, s,
                         base_seed=member_seed + 10_000 * i)
        members.append(transfer_hi(base, ds.records, hi_val,
                                   merged_exp=cal_records, cfg=head_cfg))
    cp = fit_committee(members, base, sim_only, cal_records, settings=top)
    return CalibrationReport(cp, scan, cal_ids, test_ids)


def clamp_params(v: np.ndarray) -> con.LudwikParams:
    c = np.clip(np.asarray(v, dtype=float), _PARAM_LO, _PARAM_HI)
    return con.LudwikParams(*[float(x) for x in c])


def stress_curve_error(true_spec: con.MaterialSpec,
                       pred: con.LudwikParams) -> float:
    """Mean relative stress error on the true material's strain grid."""
    E = true_spec.params.E
    sy = true_spec.params.sigma_y
    grid = con.pointwise_strain_grid(E, sy)
    s_true = con.eval_material(true_spec, grid)
    s_pred = con.eval_ludwik(pred, grid)
    return float(np.mean(np.abs(s_pred - s_true) / s_true))


def evaluate_on_materials(cp: CommitteePredictor,
                          groups: Dict[int, List[dict]],
                          material_ids: Sequence[int]) -> Dict[int, float]:
    """Per-material mean relative stress error of committee predictions
    made from replicate-averaged features."""
    means = material_feature_means({k: groups[k] for k in material_ids})
    out = {}
    for k in material_ids:
        pred = clamp_params(predict(cp, means[k]))
        out[k] = stress_curve_error(record_spec(groups[k][0]), pred)
    return out


# ---------------------------------------------------------------------------
# Pointwise curve materialization

def polyline_from_pointwise(y: np.ndarray):
    """Turn a pointwise prediction [E, sigma_y, 16 stresses] into a
    monotone stress-strain polyline.

    The curve rises from the origin to the yield point (the evaluation
    grid starts exactly at the yield strain), then follows the predicted
    stresses with dips clamped away by a running maximum floored at the
    yield stress.  Degenerate scalar predictions are nudged into the
    grid's domain rather than rejected."""
    y = np.asarray(y, dtype=float)
    E = max(float(y[0]), 1e-6)
    sy = min(max(float(y[1]), 1e-9), 0.17 * E)
    grid = con.pointwise_strain_grid(E, sy)
    stresses = np.maximum(y[2:], 0.0)
    clamped = np.maximum.accumulate(np.concatenate([[sy], stresses]))[1:]
    strains = np.concatenate([[0.0], grid])
    return strains, np.concatenate([[0.0], clamped])


# ---------------------------------------------------------------------------
# Committee serialization

def save_committee(cp: CommitteePredictor, path: str) -> None:
    """Write the committee as a JSON bundle referencing per-model files
    saved next to it."""
    stem, _ = os.path.splitext(path)
    refs = {}
    models = [("base", cp.base.mlp), ("sim_only", cp.sim_only.head)]
    models += [(f"member{i}", m.head) for i, m in enumerate(cp.members)]
    for name, mlp in models:
        mpath = f"{stem}.{name}.json"
        neural.save_model(mlp, mpath)
        refs[name] = os.path.basename(mpath)
    doc = {
        "version": COMMITTEE_VERSION,
        "target_mode": cp.base.target_mode,
        "use_base_pred": cp.sim_only.use_base_pred,
        "models": refs,
        "alpha1": cp.alpha1,
        "alpha2": cp.alpha2,
        "member_weights": cp.member_weights.tolist(),
        "a1": cp.a1,
        "a2": cp.a2,
        "logits": cp.logits.tolist(),
        "settings": [list(s) for s in cp.settings],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_committee(path: str) -> CommitteePredictor:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != COMMITTEE_VERSION:
        raise neural.ModelFormatError(f"unsupported committee version in {path}")
    folder = os.path.dirname(os.path.abspath(path))

    def load(name):
        return neural.load_model(os.path.join(folder, doc["models"][name]))

    mode = doc.get("target_mode", "params")
    with_pred = bool(doc.get("use_base_pred", True))
    base = BaseModel(load("base"), mode, np.array([]))
    sim_only = TransferModel(base, load("sim_only"), with_pred, np.array([]))
    members = []
    i = 0
    while f"member{i}" in doc["models"]:
        members.append(TransferModel(base, load(f"member{i}"), with_pred,
                                     np.array([])))
        i += 1
    return CommitteePredictor(base, sim_only, members,
                              [tuple(s) for s in doc["settings"]],
                              float(doc["a1"]), float(doc["a2"]),
                              np.array(doc["logits"], dtype=float))
