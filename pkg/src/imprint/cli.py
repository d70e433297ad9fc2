"""Batch command-line front end for the indentation pipeline.

Subcommands cover dataset generation, inverse-model training, transfer
to high-fidelity data, experimental calibration, prediction, the
identifiability sweep, and feature extraction from stored height maps.
Every artifact-producing command writes a JSON manifest recording the
effective arguments, the seed, and content hashes of all inputs and
outputs; `replay` re-runs a manifest and checks the outputs come back
bit-identical.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 numeric
failure.  Output files are written atomically (temp file + rename).
A key=value config file may supply any flag; explicit command-line
flags win.  IMPRINT_THREADS caps internal parallelism.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import constitutive as con
from . import mfnn
from . import neural
from . import profile as pr
from . import uniqueness as uq
from .surrogate import (FIDELITY_EXP, FIDELITY_HI, FIDELITY_LO, SimSetting,
                        SurrogateError, gen_dataset, load_jsonl)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

_FIDELITY_FLAG = {"lo": FIDELITY_LO, "hi": FIDELITY_HI, "exp": FIDELITY_EXP}


# ---------------------------------------------------------------------------
# Small file utilities

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_bytes(path: str, data: bytes) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: str, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _require_inputs(paths: Sequence[str]) -> Optional[str]:
    for p in paths:
        if not os.path.exists(p):
            return p
    return None


def manifest_path(out: str) -> str:
    return out + ".manifest.json"


def write_manifest(command: str, argv: Sequence[str], flags: dict,
                   inputs: Sequence[str], outputs: Sequence[str]) -> str:
    """Record what produced the outputs; anchored to the first output."""
    clean = {}
    for k, v in flags.items():
        if isinstance(v, (str, int, float, bool)) or v is None:
            clean[k] = v
        else:
            clean[k] = str(v)
    doc = {
        "command": command,
        "argv": list(argv),
        "flags": clean,
        "seed": flags.get("seed"),
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs},
    }
    path = manifest_path(outputs[0])
    _atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_config_pairs(path: str) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
    return pairs


# ---------------------------------------------------------------------------
# Hand-rolled SVG plotting (CSV stays the contract; this is a convenience)

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def svg_line_plot(series: List[dict], title: str, xlabel: str,
                  ylabel: str) -> str:
    """Minimal multi-series line plot.

    Each series dict carries x, y arrays and optionally label, dash,
    and bars=(ylo, yhi) for vertical error bars at the sample points.
    """
    width, height = 660, 470
    left, right, top, bottom = 72, 640, 44, 420
    xs = np.concatenate([np.asarray(s["x"], dtype=float) for s in series])
    ys = [np.asarray(s["y"], dtype=float) for s in series]
    for s in series:
        if "bars" in s:
            ys.extend([np.asarray(s["bars"][0]), np.asarray(s["bars"][1])])
    yall = np.concatenate(ys)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(yall.min()), float(yall.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * (right - left)

    def py(y):
        return bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{(left + right) / 2}" y="24" text-anchor="middle" '
           f'font-family="sans-serif" font-size="15">{title}</text>']
    # axes and ticks
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" '
               'stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" '
               'stroke="black"/>')
    for tx in _ticks(x_lo, x_hi):
        X = px(tx)
        out.append(f'<line x1="{X:.1f}" y1="{bottom}" x2="{X:.1f}" '
                   f'y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{bottom + 20}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{tx:.3g}</text>')
    for ty in _ticks(y_lo, y_hi):
        Y = py(ty)
        out.append(f'<line x1="{left - 5}" y1="{Y:.1f}" x2="{left}" '
                   f'y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 9}" y="{Y + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{ty:.3g}</text>')
    out.append(f'<text x="{(left + right) / 2}" y="{height - 14}" '
               'text-anchor="middle" font-family="sans-serif" '
               f'font-size="13">{xlabel}</text>')
    out.append(f'<text x="18" y="{(top + bottom) / 2}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 18 {(top + bottom) / 2})">{ylabel}</text>')

    legend_y = top + 4
    for i, s in enumerate(series):
        color = s.get("color", _PALETTE[i % len(_PALETTE)])
        dash = ' stroke-dasharray="6 4"' if s.get("dash") else ""
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}"
                       for x, y in zip(s["x"], s["y"]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.6"{dash}/>')
        if "bars" in s:
            for x, blo, bhi in zip(s["x"], s["bars"][0], s["bars"][1]):
                X = px(x)
                out.append(f'<line x1="{X:.1f}" y1="{py(blo):.1f}" '
                           f'x2="{X:.1f}" y2="{py(bhi):.1f}" '
                           f'stroke="{color}" stroke-width="1"/>')
        if s.get("label"):
            out.append(f'<line x1="{right - 150}" y1="{legend_y + 4}" '
                       f'x2="{right - 126}" y2="{legend_y + 4}" '
                       f'stroke="{color}" stroke-width="1.6"{dash}/>')
            out.append(f'<text x="{right - 120}" y="{legend_y + 8}" '
                       'font-family="sans-serif" font-size="11">'
                       f'{s["label"]}</text>')
            legend_y += 16
    out.append("</svg>")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Model file helpers (target mode and metrics ride in the model metadata)

def _save_mlp_atomic(mlp: neural.Mlp, path: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=".json")
    os.close(fd)
    try:
        neural.save_model(mlp, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_base_model(path: str) -> mfnn.BaseModel:
    mlp = neural.load_model(path)
    mode = mlp.meta.get("target_mode", "params")
    vm = np.asarray(mlp.meta.get("val_mape", []), dtype=float)
    return mfnn.BaseModel(mlp, mode, vm)


def _metrics_csv(names: Sequence[str], values: np.ndarray) -> str:
    rows = ["target,val_mape"]
    rows += [f"{n},{float(v)!r}" for n, v in zip(names, values)]
    return "\n".join(rows) + "\n"


def _target_names(mode: str, count: int) -> List[str]:
    if mode == "params":
        return list(mfnn.PARAM_NAMES)
    return ["E", "sigma_y"] + [f"stress_{i:02d}" for i in range(count - 2)]


# ---------------------------------------------------------------------------
# Commands

def cmd_gen(args, argv: Sequence[str]) -> int:
    fid = _FIDELITY_FLAG[args.fidelity]
    kind_mix: Dict[str, int] = {}
    for item in args.kind.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            name, _, cnt = item.partition(":")
            kind_mix[name] = int(cnt)
        else:
            kind_mix[item] = args.materials if fid == FIDELITY_EXP else args.count
    if not kind_mix or any(c < 1 for c in kind_mix.values()):
        _progress("gen: need at least one material kind with a positive count")
        return EXIT_USAGE

    setting = SimSetting(nu=args.nu, mu=args.mu, fidelity=fid,
                         P_max=args.pmax, grid_n=args.grid_n)
    out = args.out
    if out is None:
        out = f"dataset-{args.fidelity}-seed{args.seed}.jsonl"
    map_dir = None
    if args.emit_maps:
        if fid == FIDELITY_LO:
            _progress("gen: --emit-maps applies to hi/exp fidelities only")
            return EXIT_USAGE
        map_dir = out + ".maps"
        os.makedirs(map_dir, exist_ok=True)

    reps = args.replicates if fid == FIDELITY_EXP else 1
    total = sum(kind_mix.values()) * reps
    _progress(f"gen: {total} records at {fid}, seed {args.seed}")
    ds = gen_dataset(kind_mix, setting, base_seed=args.seed,
                     replicates=reps, map_dir=map_dir)
    lines = [json.dumps(rec) for rec in ds.records]
    _atomic_write_text(out, "\n".join(lines) + "\n")

    outputs = [out]
    if map_dir is not None:
        outputs += sorted(os.path.join(map_dir, f)
                          for f in os.listdir(map_dir))
    write_manifest("gen", argv, vars(args), [], outputs)
    _progress(f"gen: wrote {len(ds.records)} records to {out} "
              f"({ds.skips} redraws)")
    return EXIT_OK


def cmd_train(args, argv: Sequence[str]) -> int:
    missing = _require_inputs([args.data])
    if missing:
        _progress(f"train: missing input {missing}")
        return EXIT_MISSING
    ds = load_jsonl(args.data)
    cfg = neural.TrainConfig(lr=args.lr, batch_size=args.batch,
                             max_epochs=args.epochs, patience=args.patience,
                             seed=args.seed)
    _progress(f"train: {len(ds.records)} records, mode {args.target_mode}, "
              f"{args.epochs} epochs")
    base = mfnn.train_base(ds, cfg=cfg, target_mode=args.target_mode)
    base.mlp.meta["target_mode"] = args.target_mode
    base.mlp.meta["val_mape"] = [float(v) for v in base.val_mape]
    _save_mlp_atomic(base.mlp, args.out)
    names = _target_names(args.target_mode, base.mlp.d_out)
    metrics = os.path.splitext(args.out)[0] + ".metrics.csv"
    _atomic_write_text(metrics, _metrics_csv(names, base.val_mape))
    write_manifest("train", argv, vars(args), [args.data],
                   [args.out, metrics])
    _progress(f"train: val MAPE {np.round(base.val_mape, 4).tolist()}")
    return EXIT_OK


def cmd_transfer(args, argv: Sequence[str]) -> int:
    inputs = [args.base, args.data] + ([args.val] if args.val else [])
    missing = _require_inputs(inputs)
    if missing:
        _progress(f"transfer: missing input {missing}")
        return EXIT_MISSING
    base = _load_base_model(args.base)
    hi = load_jsonl(args.data).records
    val = load_jsonl(args.val).records if args.val else None
    cfg = neural.TrainConfig(lr=args.lr, batch_size=args.batch,
                             max_epochs=args.epochs, patience=args.patience,
                             seed=args.seed)
    _progress(f"transfer: {len(hi)} high-fidelity records")
    tm = mfnn.transfer_hi(base, hi, val, cfg=cfg,
                          use_base_pred=not args.no_base_pred)
    tm.head.meta["target_mode"] = base.target_mode
    tm.head.meta["use_base_pred"] = tm.use_base_pred
    tm.head.meta["val_mape"] = [float(v) for v in tm.val_mape]
    _save_mlp_atomic(tm.head, args.out)
    metrics = os.path.splitext(args.out)[0] + ".metrics.csv"
    names = _target_names(base.target_mode, tm.head.d_out)
    _atomic_write_text(metrics, _metrics_csv(names, tm.val_mape))
    write_manifest("transfer", argv, vars(args), inputs, [args.out, metrics])
    _progress(f"transfer: val MAPE {np.round(tm.val_mape, 4).tolist()}")
    return EXIT_OK


def _material_rows(cp, groups, ids) -> List[str]:
    rows = ["material,E,sigma_y,n,K,stress_error"]
    errs = []
    means = mfnn.material_feature_means({k: groups[k] for k in ids})
    for k in ids:
        p = mfnn.clamp_params(mfnn.predict(cp, means[k]))
        try:
            err = mfnn.stress_curve_error(mfnn.record_spec(groups[k][0]), p)
        except (KeyError, ValueError):
            err = float("nan")
        errs.append(err)
        rows.append(f"{k},{p.E!r},{p.sigma_y!r},{p.n!r},{p.K!r},{err!r}")
    mean_err = float(np.nanmean(errs)) if errs else float("nan")
    rows.append(f"mean,,,,,{mean_err!r}")
    return rows


def _overlay_svg(cp, groups, ids, max_materials: int = 6) -> str:
    series = []
    for ci, k in enumerate(ids[:max_materials]):
        color = _PALETTE[ci % len(_PALETTE)]
        spec = mfnn.record_spec(groups[k][0])
        E = spec.params.E
        sy = spec.params.sigma_y
        grid = con.pointwise_strain_grid(E, sy)
        s_true = con.eval_material(spec, grid)
        per_rep = []
        for rec in groups[k]:
            p = mfnn.clamp_params(mfnn.predict(cp, mfnn.record_features(rec)))
            per_rep.append(con.eval_ludwik(p, grid))
        per_rep = np.array(per_rep)
        series.append({"x": grid, "y": s_true, "color": color,
                       "label": f"material {k} true"})
        series.append({"x": grid, "y": per_rep.mean(axis=0), "color": color,
                       "dash": True, "label": f"material {k} predicted",
                       "bars": (per_rep.min(axis=0), per_rep.max(axis=0))})
    return svg_line_plot(series, "Stress-strain overlay (per-replicate spread)",
                         "strain", "stress [GPa]")


def cmd_calibrate(args, argv: Sequence[str]) -> int:
    inputs = [args.base, args.hi_data, args.hi_val, args.exp_data]
    missing = _require_inputs(inputs)
    if missing:
        _progress(f"calibrate: missing input {missing}")
        return EXIT_MISSING
    base = _load_base_model(args.base)
    hi_train = load_jsonl(args.hi_data).records
    hi_val = load_jsonl(args.hi_val).records
    exp_records = load_jsonl(args.exp_data).records
    head_cfg = neural.TrainConfig(lr=args.lr, batch_size=args.batch,
                                  max_epochs=args.epochs,
                                  patience=args.patience, seed=args.seed)
    _progress(f"calibrate: {args.materials} materials x {args.replicates} "
              "replicates; scanning contact grid")
    report = mfnn.calibrate_committee(
        base, hi_train, hi_val, exp_records,
        n_cal=args.materials, replicates=args.replicates,
        head_cfg=head_cfg, member_hi_count=args.member_count,
        member_seed=args.member_seed)

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    tmp_dir = tempfile.mkdtemp(dir=out_dir, prefix=".tmp-committee-")
    try:
        tmp_bundle = os.path.join(tmp_dir, os.path.basename(args.out))
        mfnn.save_committee(report.committee, tmp_bundle)
        produced = sorted(os.listdir(tmp_dir))
        for name in produced:
            os.replace(os.path.join(tmp_dir, name),
                       os.path.join(out_dir, name))
    finally:
        if os.path.isdir(tmp_dir):
            for leftover in os.listdir(tmp_dir):
                os.unlink(os.path.join(tmp_dir, leftover))
            os.rmdir(tmp_dir)
    outputs = [args.out] + [os.path.join(out_dir, n) for n in produced
                            if os.path.join(out_dir, n) != os.path.abspath(args.out)
                            and n != os.path.basename(args.out)]

    scan_csv = os.path.splitext(args.out)[0] + ".scan.csv"
    rows = ["nu,mu,score"] + [f"{nu},{mu},{sc!r}" for nu, mu, sc in report.scan]
    _atomic_write_text(scan_csv, "\n".join(rows) + "\n")
    outputs.append(scan_csv)

    groups = mfnn.group_exp_records(exp_records)
    summary_csv = os.path.splitext(args.out)[0] + ".summary.csv"
    rows = _material_rows(report.committee, groups, report.test_ids)
    _atomic_write_text(summary_csv, "\n".join(rows) + "\n")
    outputs.append(summary_csv)

    if args.svg:
        svg = _overlay_svg(report.committee, groups, report.test_ids)
        _atomic_write_text(args.svg, svg)
        outputs.append(args.svg)

    write_manifest("calibrate", argv, vars(args), inputs, outputs)
    _progress(f"calibrate: committee at settings {report.committee.settings}, "
              f"summary in {summary_csv}")
    return EXIT_OK


def cmd_predict(args, argv: Sequence[str]) -> int:
    inputs = [args.committee, args.data]
    missing = _require_inputs(inputs)
    if missing:
        _progress(f"predict: missing input {missing}")
        return EXIT_MISSING
    cp = mfnn.load_committee(args.committee)
    records = load_jsonl(args.data).records
    groups = mfnn.group_exp_records(records)
    ids = sorted(groups)
    rows = _material_rows(cp, groups, ids)
    _atomic_write_text(args.out, "\n".join(rows) + "\n")
    outputs = [args.out]
    if args.svg:
        _atomic_write_text(args.svg, _overlay_svg(cp, groups, ids))
        outputs.append(args.svg)
    write_manifest("predict", argv, vars(args), inputs, outputs)
    _progress(f"predict: {len(ids)} materials to {args.out}")
    return EXIT_OK


def cmd_uniqueness(args, argv: Sequence[str]) -> int:
    subsets = [s.strip() for s in args.subsets.split(",") if s.strip()]
    if not subsets:
        _progress("uniqueness: need at least one feature subset")
        return EXIT_USAGE
    for s in subsets:
        if s not in uq.FEATURE_SUBSETS:
            _progress(f"uniqueness: unknown feature subset {s!r}")
            return EXIT_USAGE
    missing = _require_inputs([args.data])
    if missing:
        _progress(f"uniqueness: missing input {missing}")
        return EXIT_MISSING
    ds = load_jsonl(args.data)
    cfg = neural.TrainConfig(lr=args.lr, batch_size=64,
                             max_epochs=args.epochs, patience=args.epochs,
                             seed=args.seed)
    _progress(f"uniqueness: training forward emulator on "
              f"{len(ds.records)} seed records")
    fm = uq.train_forward_active(ds, target_mape=args.target_mape,
                                 budget=args.budget, cfg=cfg, seed=args.seed)
    _progress(f"uniqueness: emulator n_data={fm.n_data} "
              f"converged={fm.converged} "
              f"worst_mape={fm.per_feature_mape.max():.4f}")
    all_rows = ["threshold,subset,nonunique_ratio"]
    series = []
    for s in subsets:
        _progress(f"uniqueness: sweeping {s} over grid {args.grid}")
        curve = uq.nonunique_curve(
            fm, s, grid_n=args.grid, stop_ratio=args.stop_ratio,
            max_iter=args.max_iter, seed=args.seed, n_jobs=args.jobs)
        all_rows += uq.curve_to_csv_rows(curve)[1:]
        series.append({"x": [t for t, _ in curve.points],
                       "y": [v for _, v in curve.points], "label": s})
    _atomic_write_text(args.out, "\n".join(all_rows) + "\n")
    outputs = [args.out]
    if args.svg:
        svg = svg_line_plot(series, "Non-unique ratio vs distinguishing ratio",
                            "distinguishing ratio threshold",
                            "non-unique ratio")
        _atomic_write_text(args.svg, svg)
        outputs.append(args.svg)
    write_manifest("uniqueness", argv, vars(args), [args.data], outputs)
    _progress(f"uniqueness: wrote {args.out}")
    return EXIT_OK


def _features_one(path: str) -> dict:
    if path.endswith(".csv"):
        hmap = pr.map_from_csv(path)
    else:
        hmap = pr.read_map(path)
    curve = pr.strip_average(hmap)
    pf = pr.extract_pileup_features(curve)
    names = pr.FEATURE_NAMES_PILEUP
    values = pr.assemble_features(pf, 0.0)[:9]
    return {"path": path, "ok": True, "a": hmap.a, "pitch": hmap.pitch,
            "features": {n: float(v) for n, v in zip(names, values)}}


def cmd_features(args, argv: Sequence[str]) -> int:
    paths: List[str] = []
    for p in args.paths:
        if os.path.isdir(p):
            paths += sorted(os.path.join(p, f) for f in os.listdir(p)
                            if f.endswith((".imp", ".csv")))
        else:
            paths.append(p)
    if not paths:
        _progress("features: no map files found")
        return EXIT_MISSING
    missing = _require_inputs(paths)
    if missing:
        _progress(f"features: missing input {missing}")
        return EXIT_MISSING
    entries = []
    n_ok = 0
    for p in paths:
        try:
            entries.append(_features_one(p))
            n_ok += 1
        except (ValueError, OSError) as exc:
            entries.append({"path": p, "ok": False, "error": str(exc)})
    doc = json.dumps({"maps": entries}, indent=2) + "\n"
    if args.out:
        _atomic_write_text(args.out, doc)
        write_manifest("features", argv, vars(args), paths, [args.out])
    else:
        sys.stdout.write(doc)
    _progress(f"features: {n_ok}/{len(paths)} maps extracted")
    return EXIT_OK if n_ok else EXIT_NUMERIC


def cmd_replay(args, argv: Sequence[str]) -> int:
    missing = _require_inputs([args.manifest])
    if missing:
        _progress(f"replay: missing manifest {missing}")
        return EXIT_MISSING
    with open(args.manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    stored = doc.get("outputs", {})
    _progress(f"replay: re-running `{' '.join(doc['argv'])}`")
    rc = main(list(doc["argv"]))
    if rc != EXIT_OK:
        _progress(f"replay: command returned {rc}")
        return rc
    bad = []
    for path, digest in stored.items():
        now = _sha256(path) if os.path.exists(path) else "(missing)"
        if now != digest:
            bad.append(path)
    if bad:
        for p in bad:
            _progress(f"replay: output differs: {p}")
        return EXIT_NUMERIC
    _progress(f"replay: {len(stored)} outputs bit-identical")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser construction and config-file merging

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="imprint",
        description="Indentation imprint pipeline: datasets, models, "
                    "calibration, identifiability.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a forward-model dataset")
    g.add_argument("--fidelity", choices=sorted(_FIDELITY_FLAG), required=True)
    g.add_argument("--kind", default="ludwik",
                   help="kind or comma list of kind:count pairs")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--materials", type=int, default=23,
                   help="distinct materials (exp fidelity)")
    g.add_argument("--replicates", type=int, default=8,
                   help="measurements per material (exp fidelity)")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--nu", type=float, default=0.3)
    g.add_argument("--mu", type=float, default=0.15)
    g.add_argument("--pmax", type=float, default=0.5,
                   help="peak load in newtons")
    g.add_argument("--grid-n", type=int, default=129)
    g.add_argument("--emit-maps", action="store_true",
                   help="also write binary height maps")
    g.add_argument("--out", default=None)
    g.add_argument("--config", default=None)

    t = sub.add_parser("train", help="train the base inverse model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="base-model.json")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--target-mode", choices=["params", "pointwise"],
                   default="params")
    t.add_argument("--lr", type=float, default=mfnn.DEFAULT_BASE_CFG.lr)
    t.add_argument("--epochs", type=int,
                   default=mfnn.DEFAULT_BASE_CFG.max_epochs)
    t.add_argument("--batch", type=int,
                   default=mfnn.DEFAULT_BASE_CFG.batch_size)
    t.add_argument("--patience", type=int,
                   default=mfnn.DEFAULT_BASE_CFG.patience)
    t.add_argument("--config", default=None)

    x = sub.add_parser("transfer", help="train a high-fidelity transfer head")
    x.add_argument("--base", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--val", default=None)
    x.add_argument("--out", default="transfer-model.json")
    x.add_argument("--seed", type=int, required=True)
    x.add_argument("--no-base-pred", action="store_true",
                   help="ablation: head sees features only")
    x.add_argument("--lr", type=float, default=mfnn.DEFAULT_HEAD_CFG.lr)
    x.add_argument("--epochs", type=int,
                   default=mfnn.DEFAULT_HEAD_CFG.max_epochs)
    x.add_argument("--batch", type=int,
                   default=mfnn.DEFAULT_HEAD_CFG.batch_size)
    x.add_argument("--patience", type=int,
                   default=mfnn.DEFAULT_HEAD_CFG.patience)
    x.add_argument("--config", default=None)

    c = sub.add_parser("calibrate",
                       help="scan contact settings and fit the committee")
    c.add_argument("--base", required=True)
    c.add_argument("--hi-data", required=True)
    c.add_argument("--hi-val", required=True)
    c.add_argument("--exp-data", required=True)
    c.add_argument("--materials", type=int, default=3)
    c.add_argument("--replicates", type=int, default=4)
    c.add_argument("--out", default="committee.json")
    c.add_argument("--svg", default=None)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--member-count", type=int, default=150)
    c.add_argument("--member-seed", type=int, default=500_000)
    c.add_argument("--lr", type=float, default=mfnn.DEFAULT_HEAD_CFG.lr)
    c.add_argument("--epochs", type=int,
                   default=mfnn.DEFAULT_HEAD_CFG.max_epochs)
    c.add_argument("--batch", type=int,
                   default=mfnn.DEFAULT_HEAD_CFG.batch_size)
    c.add_argument("--patience", type=int,
                   default=mfnn.DEFAULT_HEAD_CFG.patience)
    c.add_argument("--config", default=None)

    p = sub.add_parser("predict", help="predict materials with a committee")
    p.add_argument("--committee", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="predictions.csv")
    p.add_argument("--svg", default=None)
    p.add_argument("--config", default=None)

    u = sub.add_parser("uniqueness", help="non-unique ratio sweep")
    u.add_argument("--data", required=True,
                   help="low-fidelity seed records for the emulator")
    u.add_argument("--subsets",
                   default="force+H,pileup3+H,pileup9+H,pileup9+force")
    u.add_argument("--grid", type=int, default=5)
    u.add_argument("--seed", type=int, required=True)
    u.add_argument("--out", default="nonunique.csv")
    u.add_argument("--svg", default=None)
    u.add_argument("--budget", type=int, default=4000)
    u.add_argument("--target-mape", type=float, default=0.02)
    u.add_argument("--stop-ratio", type=float, default=0.01)
    u.add_argument("--max-iter", type=int, default=80)
    u.add_argument("--jobs", type=int, default=None)
    u.add_argument("--lr", type=float, default=1e-3)
    u.add_argument("--epochs", type=int, default=1200)
    u.add_argument("--config", default=None)

    f = sub.add_parser("features", help="extract features from height maps")
    f.add_argument("paths", nargs="+",
                   help="map files or directories of .imp/.csv maps")
    f.add_argument("--out", default=None)
    f.add_argument("--config", default=None)

    r = sub.add_parser("replay", help="re-run a manifest and verify hashes")
    r.add_argument("--manifest", required=True)

    return ap


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "uniqueness": cmd_uniqueness,
    "features": cmd_features,
    "replay": cmd_replay,
}


def _merge_config(parser: argparse.ArgumentParser,
                  argv: List[str]) -> List[str]:
    """Expand a --config file into flags, with explicit flags winning."""
    if not argv or argv[0] not in _COMMANDS:
        return argv
    command, rest = argv[0], list(argv[1:])
    cfg_path = None
    for i, tok in enumerate(rest):
        if tok == "--config" and i + 1 < len(rest):
            cfg_path = rest[i + 1]
            del rest[i:i + 2]
            break
        if tok.startswith("--config="):
            cfg_path = tok.split("=", 1)[1]
            del rest[i]
            break
    if cfg_path is None:
        return [command] + rest
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(cfg_path)
    pairs = load_config_pairs(cfg_path)

    subparser = None
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            subparser = action.choices[command]
    flag_actions = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            flag_actions[opt] = action

    given = set()
    for tok in rest:
        if tok.startswith("--"):
            given.add(tok.split("=", 1)[0])
    injected: List[str] = []
    for key, value in pairs.items():
        flag = "--" + key
        if flag in given or flag not in flag_actions:
            continue
        action = flag_actions[flag]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                injected.append(flag)
        else:
            injected += [flag, value]
    return [command] + injected + rest


def main(argv: Optional[Sequence[str]] = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        effective = _merge_config(parser, list(argv))
    except FileNotFoundError as exc:
        _progress(f"config file not found: {exc}")
        return EXIT_MISSING
    except ValueError as exc:
        _progress(f"bad config file: {exc}")
        return EXIT_USAGE
    try:
        args = parser.parse_args(effective)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handler = _COMMANDS[args.command]
    try:
        return handler(args, effective)
    except (neural.TrainingError, neural.ModelFormatError, SurrogateError,
            FloatingPointError) as exc:
        _progress(f"{args.command}: numeric failure: {exc}")
        return EXIT_NUMERIC
    except ValueError as exc:
        _progress(f"{args.command}: {exc}")
        return EXIT_USAGE
    except OSError as exc:
        _progress(f"{args.command}: {exc}")
        return EXIT_MISSING


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
