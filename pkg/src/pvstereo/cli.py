"""Batch command-line front-end.

Verbs: `label` (pseudo-label a dataset of stereo pairs), `eval` (compare
disparity directories against ground truth), `synth` (emit synthetic scenes),
`forward` (run the refinement network forward pass on one pair).

A config file of `key = value` lines can seed any flag; explicit flags win.
The effective configuration is echoed into the output directory so runs are
reproducible from their artifacts alone.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
import zlib
from concurrent.futures import ProcessPoolExecutor

import cv2
import numpy as np

from . import harness, report
from .losses import LossConfig
from .matcher import CostKind, MatchParams
from .optcore import DEFAULT_ITERS, GruWeights, optstereo_forward
from .pvm import VotingThresholds, pvm_pipeline
from .pyramid import (
    DisparityMap,
    Image,
    PyramidSpec,
    load_disparity,
    save_disparity,
)

WORKERS_ENV = "PVSTEREO_WORKERS"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvstereo", description="stereo pseudo-labeling and evaluation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("label", help="generate semi-dense pseudo-labels")
    p.add_argument("--data", required=True, help="dataset root with left/ and right/")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--k", type=int, help="pyramid levels (default 6)")
    p.add_argument("--kappa1", type=float, help="disparity-std threshold (default 1.0)")
    p.add_argument("--kappa2", type=float, help="confidence-std threshold (default 0.1)")
    p.add_argument("--window", type=int, help="matching window radius (default 3)")
    p.add_argument("--max-disp", type=int, help="disparity search limit (default 64)")
    p.add_argument("--cost", choices=["ncc", "sad"], help="matching cost (default ncc)")
    p.add_argument("--lrdcc-tol", type=float, help="consistency tolerance (default 1.0)")
    p.add_argument("--seed", type=int, help="pyramid jitter seed (default 0)")
    p.add_argument("--workers", type=int, help=f"parallel pairs (default ${WORKERS_ENV} or 1)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="score disparity maps against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("truth_dir")
    p.add_argument("--out", help="write eval.csv and figures here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--kind", choices=["constant", "ramp", "two-plane"], default="constant")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256, help="square scene side")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("forward", help="run the refinement forward pass")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--weights", help="binary weight sidecar")
    group.add_argument("--toy", action="store_true", help="seeded random toy weights")
    p.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    p.add_argument("--seed", type=int, default=0, help="toy weight seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forward)
    return parser


LABEL_DEFAULTS = {
    "k": 6,
    "kappa1": 1.0,
    "kappa2": 0.1,
    "window": 3,
    "max_disp": 64,
    "cost": "ncc",
    "lrdcc_tol": 1.0,
    "seed": 0,
    "workers": None,
}


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _effective_label_config(args) -> dict:
    cfg = dict(LABEL_DEFAULTS)
    if args.config:
        raw = _read_config_file(args.config)
        for key, value in raw.items():
            if key not in cfg:
                raise ValueError(f"unknown config key {key!r}")
            cfg[key] = type(LABEL_DEFAULTS[key])(value) if LABEL_DEFAULTS[key] is not None else value
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if cfg["workers"] is None:
        cfg["workers"] = int(os.environ.get(WORKERS_ENV, "1"))
    else:
        cfg["workers"] = int(cfg["workers"])
    return cfg


def _find_pairs(root: str) -> list[tuple[str, str, str]]:
    left_dir = os.path.join(root, "left")
    right_dir = os.path.join(root, "right")
    if not (os.path.isdir(left_dir) and os.path.isdir(right_dir)):
        raise OSError(f"expected {root}/left and {root}/right directories")
    pairs = []
    for name in sorted(os.listdir(left_dir)):
        if not name.lower().endswith((".png", ".jpg", ".pgm")):
            continue
        rp = os.path.join(right_dir, name)
        if not os.path.exists(rp):
            raise OSError(f"missing right image for {name}")
        pairs.append((os.path.splitext(name)[0], os.path.join(left_dir, name), rp))
    return pairs


def _load_image(path: str) -> Image:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"unreadable image {path}")
    if raw.dtype == np.uint16:
        data = raw / 65535.0
    else:
        data = raw / 255.0
    if data.ndim == 3:
        data = data[:, :, ::-1]  # BGR to RGB
        if data.shape[2] == 4:
            data = data[:, :, :3]
    return Image(data.astype(np.float32))


def _atomic_bytes(path: str, payload: bytes) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write(path: str, writer) -> None:
    """Run `writer(tmp_path)` then rename the result into place."""
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=os.path.splitext(path)[1])
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _label_one(task) -> tuple[str, float, str]:
    name, left_path, right_path, cfg, out = task
    try:
        left = _load_image(left_path)
        right = _load_image(right_path)
        # per-pair seed derived from the global seed and the pair name, so
        # results do not depend on scheduling order or worker count
        pair_seed = (cfg["seed"] * 2654435761 + zlib.crc32(name.encode())) % 2**31
        spec = PyramidSpec(levels=cfg["k"], seed=pair_seed)
        mp = MatchParams(
            window_radius=cfg["window"],
            max_disparity=cfg["max_disp"],
            cost_kind=CostKind(cfg["cost"]),
        )
        thresholds = VotingThresholds(cfg["kappa1"], cfg["kappa2"])
        labels, votes = pvm_pipeline(left, right, spec, mp, thresholds, cfg["lrdcc_tol"])

        _atomic_write(
            os.path.join(out, f"{name}.pfm"), lambda p: save_disparity(labels, p, "pfm")
        )
        if not labels.mask.any() or labels.values[labels.mask].max() <= 255.99:
            _atomic_write(
                os.path.join(out, f"{name}.png"),
                lambda p: save_disparity(labels, p, "png16"),
            )
        _atomic_write(
            os.path.join(out, f"{name}_vote.png"),
            lambda p: _write_vote_png(votes, p),
        )
        _atomic_write(
            os.path.join(out, f"{name}_preview.png"),
            lambda p: report.save_disparity_figure(
                labels, p, max(cfg["max_disp"], 1), title=name
            ),
        )
        return name, harness.density(labels), ""
    except Exception as exc:  # collected per pair, reported at the end
        return name, 0.0, str(exc)


def _write_vote_png(votes: np.ndarray, path: str) -> None:
    if not cv2.imwrite(path, (votes.astype(np.uint16) * 128).clip(0, 255).astype(np.uint8)):
        raise OSError(f"failed to write {path}")


def cmd_label(args) -> int:
    cfg = _effective_label_config(args)
    pairs = _find_pairs(args.data)
    if not pairs:
        raise OSError(f"no pairs found under {args.data}")
    os.makedirs(args.out, exist_ok=True)
    _atomic_bytes(
        os.path.join(args.out, "config.txt"),
        "".join(f"{k} = {v}\n" for k, v in sorted(cfg.items())).encode(),
    )
    tasks = [(name, lp, rp, cfg, args.out) for name, lp, rp in pairs]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = list(pool.map(_label_one, tasks))
    else:
        results = [_label_one(t) for t in tasks]

    rows = []
    failures = []
    for name, dens, err in results:
        if err:
            failures.append((name, err))
            print(f"FAIL {name}: {err}", file=sys.stderr)
        else:
            rows.append((name, dens))
            print(f"ok {name}: density {dens:.1f}%")
    _write_csv(
        os.path.join(args.out, "summary.csv"),
        ["pair", "density_pct"],
        [(n, f"{d:.4f}") for n, d in rows],
    )
    return 1 if failures else 0


def _write_csv(path: str, header: list[str], rows) -> None:
    def writer(tmp):
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)

    _atomic_write(path, writer)


def cmd_eval(args) -> int:
    names = sorted(
        os.path.splitext(f)[0]
        for f in os.listdir(args.pred_dir)
        if f.endswith(".pfm")
    )
    if not names:
        raise OSError(f"no .pfm predictions under {args.pred_dir}")
    rows = []
    total_abs_err = 0.0
    total_bad = 0
    total_covalid = 0
    for name in names:
        pred = load_disparity(os.path.join(args.pred_dir, f"{name}.pfm"))
        truth_path = os.path.join(args.truth_dir, f"{name}.pfm")
        if not os.path.exists(truth_path):
            raise OSError(f"missing ground truth for {name}")
        truth = load_disparity(truth_path)
        m = pred.mask & truth.mask
        n = int(m.sum())
        pair_aepe = harness.aepe(pred, truth)
        pair_f1 = harness.f1_3px(pred, truth)
        pair_density = harness.density(pred)
        rows.append((name, pair_aepe, pair_f1, pair_density, n))
        total_abs_err += pair_aepe * n
        total_bad += int(round(pair_f1 / 100.0 * n))
        total_covalid += n
        print(
            f"{name}: AEPE {pair_aepe:.3f} px, F1 {pair_f1:.2f}%, "
            f"density {pair_density:.1f}%"
        )
    agg_aepe = total_abs_err / total_covalid
    agg_f1 = 100.0 * total_bad / total_covalid
    print(f"aggregate: AEPE {agg_aepe:.3f} px, F1 {agg_f1:.2f}% over {total_covalid} px")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(
            os.path.join(args.out, "eval.csv"),
            ["pair", "aepe_px", "f1_pct", "density_pct", "covalid_px"],
            [(n, f"{a:.6f}", f"{f:.6f}", f"{d:.4f}", c) for n, a, f, d, c in rows],
        )
        report.save_eval_figure(
            [r[0] for r in rows],
            [r[1] for r in rows],
            os.path.join(args.out, "eval_aepe.png"),
        )
    return 0


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    kind = args.kind.replace("-", "_")
    s = args.size
    cap = s / 4.0 - 1.0  # shifts must stay below a quarter of the width
    if cap <= 2.0:
        raise ValueError(f"scene size {s} too small for a synthetic shift field")
    for i in range(args.count):
        if kind == "constant":
            params = (min(float(7 + (i % 3) * 5), cap),)
        elif kind == "ramp":
            params = (2.0, min(float(16 + (i % 3) * 8), cap))
        else:
            params = (min(4.0, cap / 2.0), min(12.0, cap))
        scene = harness.make_rds(s, s, kind, params, seed=args.seed + i)
        harness.save_scene(scene, os.path.join(args.out, f"scene_{i:03d}"))
        print(f"wrote scene_{i:03d} ({kind}, params {params})")
    return 0


def cmd_forward(args) -> int:
    left = _load_image(args.left)
    right = _load_image(args.right)
    if args.toy:
        weights = GruWeights.random(args.seed)
    else:
        weights = GruWeights.load(args.weights)
    preds = optstereo_forward(left, right, weights, args.iters)
    os.makedirs(args.out, exist_ok=True)
    means = []
    for i, pred in enumerate(preds, start=1):
        _atomic_write(
            os.path.join(args.out, f"iter_{i:02d}.pfm"),
            lambda p, pred=pred: save_disparity(pred, p, "pfm"),
        )
        means.append(float(pred.values.mean()))
    final = preds[-1]
    _atomic_write(
        os.path.join(args.out, "final.pfm"), lambda p: save_disparity(final, p, "pfm")
    )
    max_d = max(float(final.values.max()), 1.0)
    _atomic_write(
        os.path.join(args.out, "final_preview.png"),
        lambda p: report.save_disparity_figure(final, p, max_d, title="final iterate"),
    )
    report.save_iteration_figure(
        means, os.path.join(args.out, "iteration_trace.png"), "mean disparity (px)"
    )
    print(f"wrote {len(preds)} iterates to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
