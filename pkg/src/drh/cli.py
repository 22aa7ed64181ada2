"""Command-line entry point: train / index / search / eval / bench / replay.

Every subcommand writes a run manifest (config snapshot, seeds, input and
output digests, timings); `drh replay <manifest>` re-executes the recorded
command, reproducing outputs byte-for-byte. Exit codes: 0 success, 2 usage
error, 3 data error, 4 numeric failure.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bench import run_bench
from .errors import DataError, NumericError
from .evalkit import average_precision, mean_average_precision, parse_ground_truth
from .featmap import read_feature_map
from .hashnet import TrainConfig, load_params, save_params, train
from .index import build_index, load_index, save_index
from .pipeline import SearchConfig, search
from .pooling import pool_boxes
from .regions import (
    DEFAULT_ASPECT_THRESHOLD,
    DEFAULT_LAMBDA,
    RegionBox,
    SlidingWindowConfig,
    propose_regions,
)

log = logging.getLogger("drh")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(command: str, args: argparse.Namespace, inputs, outputs, timings) -> None:
    manifest = {
        "tool": "drh",
        "version": __version__,
        "command": command,
        "config": {
            k: v
            for k, v in vars(args).items()
            if k not in ("func", "manifest", "command") and v is not None
        },
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs if Path(p).is_file()},
        "timings_s": timings,
    }
    path = args.manifest
    if path is None:
        path = str(outputs[0]) + ".manifest.json" if outputs else f"drh-{command}.manifest.json"
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("manifest written to %s", path)


def _feature_files(features_dir: str) -> list[Path]:
    files = sorted(Path(features_dir).glob("*.drhf"))
    if not files:
        raise DataError(f"no .drhf files under {features_dir}")
    return files


def _load_dims(path: str | None) -> dict[str, tuple[int, int]] | None:
    if path is None:
        return None
    raw = json.loads(Path(path).read_text())
    dims = {}
    for image_id, entry in raw.items():
        if isinstance(entry, dict):
            dims[image_id] = (int(entry["width"]), int(entry["height"]))
        else:
            dims[image_id] = (int(entry[0]), int(entry[1]))
    return dims


def _window_config(args: argparse.Namespace) -> SlidingWindowConfig:
    return SlidingWindowConfig(
        lam=args.lam,
        aspect_threshold=args.aspect_threshold,
        include_global=not getattr(args, "no_global", False),
    )


def _parse_bbox(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise DataError(f"--bbox expects X,Y,W,H, got {text!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as exc:
        raise DataError(f"--bbox expects numbers, got {text!r}") from exc
    return x, y, w, h


def cmd_train(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    files = _feature_files(args.features)
    dims = _load_dims(args.dims)
    cfg = _window_config(args)
    rows = []
    for path in files:
        fm = read_feature_map(path)
        img_w, img_h = (dims or {}).get(
            fm.image_id, (fm.width_c * fm.stride, fm.height_c * fm.stride)
        )
        if args.global_only:
            boxes = [RegionBox(0, 0, fm.width_c, fm.height_c)]
        else:
            boxes = propose_regions(fm, img_w, img_h, cfg)
        rows.append(pool_boxes(fm, boxes))
    descriptors = np.vstack(rows)
    log.info("training on %d descriptors from %d maps", descriptors.shape[0], len(files))
    t_pool = time.perf_counter()

    train_cfg = TrainConfig(
        bits=args.bits,
        alpha=args.alpha,
        beta=args.beta,
        eta=args.eta,
        learning_rate=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        init_stddev=args.init_stddev,
    )
    result = train(descriptors, train_cfg)
    save_params(result.params, args.out)
    t_train = time.perf_counter()
    log.info("final epoch loss %.6g", result.epoch_losses[-1])

    _write_manifest(
        "train",
        args,
        inputs=files,
        outputs=[args.out],
        timings={"pool": t_pool - t0, "train": t_train - t_pool},
    )
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    files = _feature_files(args.features)
    params = load_params(args.model)
    dims = _load_dims(args.dims)
    cfg = _window_config(args)
    index = build_index((read_feature_map(p) for p in files), params, cfg, dims)
    save_index(index, args.out)
    log.info("indexed %d images", len(index))
    _write_manifest(
        "index",
        args,
        inputs=[args.model, *files],
        outputs=[args.out],
        timings={"build": time.perf_counter() - t0},
    )
    return 0


def _entry_json(entry, stage_scores):
    box = entry.best_box
    return {
        "image_id": entry.image_id,
        "score": entry.score,
        "stage_scores": stage_scores.get(entry.image_id, {}),
        "best_box": None if box is None else [box.x0, box.y0, box.w, box.h],
    }


def cmd_search(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    index = load_index(args.index)
    params = load_params(args.model)
    query_fm = read_feature_map(args.query)
    bbox = _parse_bbox(args.bbox)
    cfg = SearchConfig(
        m=args.m, q=args.q, use_gqe=not args.no_gqe, use_lqe=not args.no_lqe
    )
    result = search(index, (query_fm, bbox), params, cfg)

    stage_scores: dict[str, dict[str, float]] = {}
    for stage, ranked in result.stages.items():
        for entry in ranked.entries:
            stage_scores.setdefault(entry.image_id, {})[stage] = entry.score

    top = result.final.entries[: args.top]
    if args.format == "json":
        payload = [_entry_json(e, stage_scores) for e in top]
        print(json.dumps(payload, indent=2))
    else:
        for entry in top:
            box = entry.best_box
            box_txt = "-" if box is None else f"{box.x0},{box.y0},{box.w},{box.h}"
            print(f"{entry.image_id}\t{entry.score}\t{box_txt}")
    _write_manifest(
        "search",
        args,
        inputs=[args.index, args.model, args.query],
        outputs=[],
        timings={"search": time.perf_counter() - t0},
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    index = load_index(args.index)
    params = load_params(args.model)
    gts = parse_ground_truth(args.gt_dir)
    base = SearchConfig(m=args.m, q=args.q, use_gqe=False, use_lqe=False)
    full = SearchConfig(m=args.m, q=args.q, use_gqe=True, use_lqe=True)

    rankings = {"gdrh": {}, "gdrh_ldrh": {}, "all": {}}
    per_query: dict[str, dict[str, float]] = {}
    for gt in gts:
        query_path = Path(args.features) / f"{gt.query_image_id}.drhf"
        query_fm = read_feature_map(query_path)
        plain = search(index, (query_fm, gt.bbox_px), params, base)
        expanded = search(index, (query_fm, gt.bbox_px), params, full)
        rankings["gdrh"][gt.query_id] = plain.stages["gdrh"].image_ids()
        rankings["gdrh_ldrh"][gt.query_id] = plain.final.image_ids()
        rankings["all"][gt.query_id] = expanded.final.image_ids()

    for gt in gts:
        per_query[gt.query_id] = {
            name: average_precision(rankings[name][gt.query_id], gt) for name in rankings
        }
    maps = {name: mean_average_precision(rankings[name], gts) for name in rankings}

    report = {
        "map": maps,
        "per_query": per_query,
        "queries": len(gts),
        "m": args.m,
        "q": args.q,
    }
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name in ("gdrh", "gdrh_ldrh", "all"):
        print(f"mAP {name}: {maps[name]:.4f}")
    _write_manifest(
        "eval",
        args,
        inputs=[args.index, args.model],
        outputs=[args.report],
        timings={"eval": time.perf_counter() - t0},
    )
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    index = load_index(args.index) if args.index else None
    report = run_bench(
        records=args.records,
        bits=args.bits,
        dim=args.dim,
        trials=args.trials,
        seed=args.seed,
        index=index,
    )
    payload = report.to_dict()
    print(json.dumps(payload, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_manifest(
        "bench",
        args,
        inputs=[args.index] if args.index else [],
        outputs=[args.out] if args.out else [],
        timings={"bench": time.perf_counter() - t0},
    )
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    manifest = json.loads(Path(args.manifest_path).read_text())
    command = manifest["command"]
    if command == "replay":
        raise DataError("cannot replay a replay manifest")
    argv = [command]
    for key, value in manifest["config"].items():
        if key in ("seed", "threads", "verbose"):
            continue
        flag = "--" + key.replace("_", "-")
        if key == "lam":
            flag = "--lambda"
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        else:
            argv.extend([flag, str(value)])
    seed = manifest["config"].get("seed")
    if seed is not None:
        argv.extend(["--seed", str(seed)])
    log.info("replaying: drh %s", " ".join(argv))
    return main(argv)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=42, help="seed for all randomness")
    parser.add_argument("--threads", type=int, default=None, help="cap worker threads")
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--manifest", default=None, help="run-manifest output path")


def _add_window_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA, help="window overlap fraction"
    )
    parser.add_argument(
        "--aspect-threshold", type=float, default=DEFAULT_ASPECT_THRESHOLD
    )
    parser.add_argument("--no-global", action="store_true", help="drop the whole-map proposal")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drh", description=__doc__)
    parser.add_argument("--version", action="version", version=f"drh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the region hashing layer on feature maps")
    p.add_argument("--features", required=True, help="directory of .drhf files")
    p.add_argument("--dims", default=None, help="manifest.json with original pixel dims")
    p.add_argument("--bits", type=int, default=1024)
    p.add_argument("--alpha", type=float, default=100.0)
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--init-stddev", type=float, default=0.01)
    p.add_argument("--global-only", action="store_true", help="train on global regions only")
    p.add_argument("--out", required=True, help="output model path (.drhm)")
    _add_window_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build a hash index from feature maps")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--dims", default=None)
    p.add_argument("--out", required=True, help="output index path (.drhi)")
    _add_window_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="query the index with an image patch")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True, help="query feature map (.drhf)")
    p.add_argument("--bbox", required=True, help="query patch X,Y,W,H in pixels")
    p.add_argument("--m", type=int, default=400)
    p.add_argument("--q", type=int, default=6)
    p.add_argument("--no-gqe", action="store_true")
    p.add_argument("--no-lqe", action="store_true")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    _add_common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="mAP evaluation against a ground-truth directory")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True, help="directory holding query .drhf files")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--m", type=int, default=400)
    p.add_argument("--q", type=int, default=6)
    p.add_argument("--report", required=True, help="output report path (.json)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="scan-throughput benchmark (hash vs float)")
    p.add_argument("--index", default=None, help="bench a saved index instead of synthetic codes")
    p.add_argument("--records", type=int, default=105_000)
    p.add_argument("--bits", type=int, default=1024)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", default=None, help="write the report as JSON")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest_path")
    _add_common(p)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    # platform nag about an old TBB; the kernel falls back to OpenMP anyway
    warnings.filterwarnings("ignore", message=".*TBB.*")
    if getattr(args, "threads", None):
        import numba

        cap = numba.config.NUMBA_DEFAULT_NUM_THREADS
        numba.set_num_threads(max(1, min(args.threads, cap)))
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
