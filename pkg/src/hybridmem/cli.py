"""Command-line entry point.

Exit codes: 0 on success, 2 on I/O or malformed input (and usage errors),
3 on shape or frame mismatches. Machine-readable results go to stdout,
logs to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import formats, oracles
from .errors import EmptyInput, FrameMismatch, HybridMemError, ShapeMismatch
from .memory import DEFAULT_MASK_CHANNELS, FeatureMap, MemoryWeights
from .metrics import MCS_THRESHOLDS, MaskSequence, evaluate, mcs
from .selection import DEFAULT_RATIO, MODES, ScoredFrame, VideoBundle, collaborate, select_reference_frames
from .synth import corrupt_labels, synth_scenario

log = logging.getLogger("hybridmem")

EXIT_IO = 2
EXIT_MISMATCH = 3


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{name} must be an integer, got {raw!r}")


def _thresholds(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}")
    if not vals or any(not 0 <= v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("thresholds must be comma-separated values in [0, 1]")
    return vals


def _ratio(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio {text!r}")
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("ratio must lie in (0, 1]")
    return v


def _emit(record) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")


# ------------------------------------------------------------------ evaluate


def _mask_video(directory: Path, video_id: str) -> MaskSequence:
    paths = formats.list_masks(directory)
    masks = [formats.read_mask(p) for p in paths]
    stems = [p.stem for p in paths]
    indices = [int(s) for s in stems] if all(s.isdigit() for s in stems) else list(range(len(stems)))
    return MaskSequence(video_id, masks, indices)


def load_videos(directory) -> dict[str, Path]:
    """Video id -> frame directory. A directory of PGM files is a single video."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    if formats.list_masks(directory):
        return {"": directory}
    subdirs = sorted(p for p in directory.iterdir() if p.is_dir() and formats.list_masks(p))
    return {p.name: p for p in subdirs}


def cmd_evaluate(args) -> int:
    preds = load_videos(args.pred_dir)
    gts = load_videos(args.gt_dir)
    if "" in gts or "" in preds:
        if set(preds) != {""} or set(gts) != {""}:
            raise FrameMismatch("one of the directories holds frames, the other holds videos")
        name = Path(args.gt_dir).resolve().name
        pairs = [(name, preds[""], gts[""])]
    else:
        if set(preds) != set(gts):
            missing = sorted(set(gts) ^ set(preds))
            raise FrameMismatch(f"video sets differ: {missing}")
        if not gts:
            raise EmptyInput("no videos found")
        pairs = [(v, preds[v], gts[v]) for v in sorted(gts)]

    def load(pair):
        vid, p, g = pair
        return _mask_video(p, vid), _mask_video(g, vid)

    with ThreadPoolExecutor(max(1, args.jobs)) as pool:
        loaded = list(pool.map(load, pairs))
    report = evaluate(
        [p for p, _ in loaded],
        [g for _, g in loaded],
        thresholds=args.mcs_thresholds,
        with_a2d=args.a2d,
        tolerance=args.tolerance,
    )
    for rec in report.records():
        _emit(rec)
    return 0


# ----------------------------------------------------------------- propagate


def load_weights(directory) -> MemoryWeights:
    t = formats.read_tensor_dir(directory)
    try:
        return MemoryWeights(t["key_proj"], t["joint_proj"], t["mask_proj"])
    except KeyError as e:
        raise FileNotFoundError(f"weights directory {directory} lacks {e.args[0]}.htrt")


def save_weights(directory, w: MemoryWeights) -> None:
    formats.write_tensor_dir(
        directory, {"key_proj": w.key_proj, "joint_proj": w.joint_proj, "mask_proj": w.mask_proj}
    )


def read_features(path) -> list[FeatureMap]:
    arr = formats.read_tensor(path)
    if arr.ndim != 4:
        raise ShapeMismatch(f"features must be T x H x W x C, got shape {arr.shape}")
    return [FeatureMap.from_grid(frame) for frame in arr]


def cmd_propagate(args) -> int:
    features = read_features(args.features)
    scores = formats.read_tensor(args.scores).reshape(-1)
    if len(scores) != len(features):
        raise FrameMismatch(f"{len(scores)} scores for {len(features)} frames")
    if args.weights:
        weights = load_weights(args.weights)
    else:
        weights = MemoryWeights.random(args.seed, features[0].channels, args.mask_channels)

    ref_dir = Path(args.ref_masks)
    if not ref_dir.is_dir():
        raise FileNotFoundError(f"not a directory: {ref_dir}")
    frames = []
    for t, s in enumerate(scores):
        p = ref_dir / formats.frame_name(t)
        frames.append(ScoredFrame(t, float(s), mask=formats.read_mask(p) if p.exists() else None))
    video = VideoBundle(ref_dir.name, features, frames)
    result = collaborate(
        video, weights, args.ratio, mode=args.mode, clip_length=args.clip_length, jobs=args.jobs
    )

    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "soft").mkdir(parents=True, exist_ok=True)
    for t, (binary, soft) in enumerate(zip(result.masks.masks, result.soft)):
        formats.write_mask(out / "masks" / formats.frame_name(t), binary.astype(np.float32))
        formats.write_mask(out / "soft" / formats.frame_name(t), np.clip(soft, 0.0, 1.0))
    log.info("propagated %d frames from references %s", len(frames), result.references)
    _emit({"frames": len(frames), "references": result.references, "mode": args.mode})
    return 0


# ------------------------------------------------------------ select / mcs


def cmd_select(args) -> int:
    scores = formats.read_tensor(args.scores).reshape(-1)
    _emit(select_reference_frames([float(s) for s in scores], args.ratio))
    return 0


def read_jtable(path) -> list[list[float]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if any(cell.strip() == "" for cell in row):
                raise ValueError(f"{path}:{lineno}: blank cell in J table")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell in J table")
    return rows


def cmd_mcs(args) -> int:
    print(mcs(read_jtable(args.jtable), args.tau))
    return 0


# ------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    sc = synth_scenario(
        args.seed, args.frames, args.height, args.width, args.channels, args.separation, args.noise
    )
    out = Path(args.out)
    for sub in ("gt", "ref_masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    formats.write_tensor(out / "features.htrt", np.stack([f.grid() for f in sc.features]))
    formats.write_tensor(out / "scores.htrt", sc.scores)
    rng = np.random.default_rng(args.seed + 1)
    for t, m in enumerate(sc.masks):
        formats.write_mask(out / "gt" / formats.frame_name(t), m)
        ref = corrupt_labels(m, args.label_noise, rng) if args.label_noise > 0 else m
        formats.write_mask(out / "ref_masks" / formats.frame_name(t), ref)
    save_weights(out / "weights", MemoryWeights.random(args.seed + 2, args.channels, args.mask_channels))
    meta = {k: getattr(args, k) for k in
            ("seed", "frames", "height", "width", "channels", "separation", "noise", "label_noise", "mask_channels")}
    (out / "scenario.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    log.info("wrote scenario to %s", out)
    return 0


# ------------------------------------------------------------------ oracle


def _oracle(op: str, data: dict):
    if op == "readout":
        values, weights = oracles.naive_readout(data["query"], data["keys"], data["values"])
        return {"values": values, "affinity": weights}
    if op == "hybrid":
        return oracles.naive_hybrid(
            data["query_features"], data["ref_features"], data["ref_masks"],
            data["key_proj"], data["joint_proj"], data["mask_proj"], data.get("tau", 0.5),
        )
    if op == "aggregate":
        return {"token": oracles.naive_aggregate(data["joint"], data["probs"], data.get("tau", 0.5))}
    if op == "hungarian":
        cost, perm = oracles.brute_force_assignment(data["cost"])
        return {"cost": cost, "assignment": perm}
    if op == "giou":
        g = oracles.naive_giou(data["pred"], data["gt"])
        return {"giou": g, "loss": 1.0 - g}
    if op == "jaccard":
        return {"jaccard": oracles.naive_jaccard(np.asarray(data["pred"]), np.asarray(data["gt"]))}
    if op == "boundary":
        return {"f": oracles.naive_boundary_f(np.asarray(data["pred"]), np.asarray(data["gt"]),
                                              data["tolerance"])}
    if op == "mcs":
        return {"mcs": oracles.naive_mcs(data["jtable"], data["tau"])}
    raise ValueError(f"unknown oracle op {op!r}")


ORACLE_OPS = ("readout", "hybrid", "aggregate", "hungarian", "giou", "jaccard", "boundary", "mcs")


def cmd_oracle(args) -> int:
    with open(args.input) as fh:
        data = json.load(fh)
    _emit(_oracle(args.op, data))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridmem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    jobs = _env_int("HTR_JOBS", 1)
    seed = _env_int("HTR_SEED", 0)

    p = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--mcs-thresholds", type=_thresholds, default=MCS_THRESHOLDS)
    p.add_argument("--a2d", action="store_true", help="add P@K, oIoU, mIoU and mAP")
    p.add_argument("--tolerance", type=float, default=None, help="boundary tolerance in pixels")
    p.add_argument("--jobs", type=int, default=jobs)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("propagate", help="segment a video from its best-scored reference frames")
    p.add_argument("--features", required=True)
    p.add_argument("--ref-masks", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--ratio", type=_ratio, default=DEFAULT_RATIO)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None, help="directory with key_proj/joint_proj/mask_proj.htrt")
    p.add_argument("--mode", choices=MODES, default="hybrid")
    p.add_argument("--clip-length", type=int, default=None)
    p.add_argument("--mask-channels", type=int, default=DEFAULT_MASK_CHANNELS)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--jobs", type=int, default=jobs)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("select", help="print the selected reference frame indices")
    p.add_argument("--scores", required=True)
    p.add_argument("--ratio", type=_ratio, default=DEFAULT_RATIO)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("mcs", help="mask consistency score of a CSV J table")
    p.add_argument("--jtable", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.set_defaults(func=cmd_mcs)

    p = sub.add_parser("synth", help="write a synthetic separable scenario")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--mask-channels", type=int, default=DEFAULT_MASK_CHANNELS)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle", help="brute-force reference computation from a JSON input")
    p.add_argument("--op", required=True, choices=ORACLE_OPS)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ShapeMismatch, FrameMismatch) as e:
        log.error("%s", e)
        return EXIT_MISMATCH
    except (OSError, ValueError, KeyError, HybridMemError) as e:
        log.error("%s", e)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
