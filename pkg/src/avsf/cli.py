"""Command-line entry points: preprocess, train, eval, export-embeddings.

Exit codes are a stable contract: 0 success, 1 validation failure (bad
arguments, malformed manifests/configs, missing inputs), 2 runtime
failure (a pipeline stage died while processing valid inputs).
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import cache as cache_mod
from .errors import AvsfError, ManifestError, UnknownKind, UnknownMode
from .evaluation import (
    build_report,
    evaluate_testsets,
    render_table,
    write_report_json,
    write_roc_csv,
)
from .embeddings import export_embeddings
from .lips import BlobFaceLandmarkProvider, SyntheticLandmarkProvider
from .manifest import MediaClip, Split, load_manifest
from .models.checkpoint import load_checkpoint, read_descriptor
from .models.detector import EXPORTABLE_KINDS, DetectorConfig, SyncDetector
from .training import (
    ClipExample,
    FreezeMode,
    TrainConfig,
    carve_validation,
    fold_clips,
    make_kfold,
    save_run,
    train,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class ValidationFailure(Exception):
    """User input (arguments, config, manifest, missing file) is invalid."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments by default; our contract reserves
    # 2 for runtime failures, so usage errors become validation failures.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ValidationFailure(message)


def _landmark_provider(name: str):
    if name == "blob":
        return BlobFaceLandmarkProvider()
    if name == "fixed":
        return SyntheticLandmarkProvider()
    raise ValidationFailure(f"unknown landmark provider {name!r} (choose blob or fixed)")


def _load_manifest_checked(path: str | Path) -> list[MediaClip]:
    path = Path(path)
    if not path.is_file():
        raise ValidationFailure(f"manifest not found: {path}")
    try:
        return load_manifest(path)
    except ManifestError as exc:
        raise ValidationFailure(str(exc)) from exc


# --------------------------------------------------------------------------
# preprocess
# --------------------------------------------------------------------------

def _preprocess_one(clip: MediaClip, provider, root: Path) -> tuple[str, str | None]:
    try:
        if cache_mod.is_up_to_date(clip, root):
            return "skipped", None
        entry = cache_mod.preprocess_clip(clip, provider)
        cache_mod.write_entry(entry, root)
        return "processed", None
    except AvsfError as exc:
        return "failed", str(exc)


def cmd_preprocess(args: argparse.Namespace) -> int:
    clips = _load_manifest_checked(args.manifest)
    root = cache_mod.cache_root(args.cache_dir)
    root.mkdir(parents=True, exist_ok=True)
    provider = _landmark_provider(args.landmarks)

    statuses: dict[str, tuple[str, str | None]] = {}
    if args.workers > 1 and getattr(provider, "shareable", False):
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = pool.map(lambda c: _preprocess_one(c, provider, root), clips)
            for clip, res in zip(clips, results):
                statuses[clip.clip_id] = res
    else:
        for clip in clips:
            statuses[clip.clip_id] = _preprocess_one(clip, provider, root)

    processed = [cid for cid, (s, _) in statuses.items() if s == "processed"]
    skipped = [cid for cid, (s, _) in statuses.items() if s == "skipped"]
    failures = {cid: err for cid, (s, err) in statuses.items() if s == "failed"}

    ok_ids = set(processed) | set(skipped)
    per_class = Counter(("fake" if int(c.label) else "real") for c in clips if c.clip_id in ok_ids)
    per_manip = Counter(c.manipulation.value for c in clips if c.clip_id in ok_ids)
    summary = {
        "manifest": str(args.manifest),
        "cache_dir": str(root),
        "processed": len(processed),
        "skipped_up_to_date": len(skipped),
        "failed": [{"clip_id": cid, "error": err} for cid, err in sorted(failures.items())],
        "per_class": dict(sorted(per_class.items())),
        "per_manipulation": dict(sorted(per_manip.items())),
    }
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))

    print(f"preprocessed {len(processed)} clip(s), {len(skipped)} up to date, {len(failures)} failed")
    for cid, err in sorted(failures.items()):
        print(f"  FAILED {cid}: {err}", file=sys.stderr)
    print(f"cache: {root}")
    if failures and args.strict:
        return EXIT_RUNTIME
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def _apply_overrides(config: dict, overrides: Sequence[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ValidationFailure(f"--set expects dotted.path=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        if not all(keys):
            raise ValidationFailure(f"--set has an empty key segment in {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValidationFailure(f"--set path {dotted!r} crosses a non-object value")
        node[keys[-1]] = value
    return config


def _build_model_config(model_section: dict) -> DetectorConfig:
    try:
        if "preset" in model_section:
            return DetectorConfig.preset(model_section["preset"])
        return DetectorConfig.from_dict(model_section)
    except (ValueError, TypeError, KeyError) as exc:
        raise ValidationFailure(f"model: {exc}") from exc


def _examples_from_cache(clips: Sequence[MediaClip], root: Path) -> list[ClipExample]:
    examples = []
    for clip in clips:
        path = cache_mod.cache_path(root, clip.clip_id)
        if not path.exists():
            raise ValidationFailure(
                f"no cache entry for clip {clip.clip_id!r} in {root}; run preprocess first"
            )
        examples.append(ClipExample(clip=clip, pair=cache_mod.load_pair(clip, root)))
    return examples


def cmd_train(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    if not config_path.is_file():
        raise ValidationFailure(f"config not found: {config_path}")
    try:
        config = json.loads(config_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"config is not valid JSON: {exc}") from exc
    config = _apply_overrides(config, args.set or [])

    for section in ("model", "train", "data"):
        if section not in config:
            raise ValidationFailure(f"{section}: missing config section")
    if "manifest" not in config["data"]:
        raise ValidationFailure("data.manifest: missing")
    run_dir = Path(config.get("run_dir") or args.run_dir or "run")

    try:
        train_config = TrainConfig.from_dict(config["train"])
    except (ValueError, TypeError) as exc:
        raise ValidationFailure(str(exc)) from exc
    if train_config.freeze_mode in (FreezeMode.ENSEMBLE_FROZEN_BACKBONES, FreezeMode.ENSEMBLE_JOINT):
        raise ValidationFailure(
            "freeze_mode: ensemble modes need face clips and are trained via the library API, "
            "not cmd_train"
        )
    detector_config = _build_model_config(config["model"])

    clips = _load_manifest_checked(config["data"]["manifest"])
    root = cache_mod.cache_root(config["data"].get("cache_dir"))
    train_clips = [c for c in clips if c.split is Split.TRAIN]
    val_clips = [c for c in clips if c.split is Split.VAL]
    if not train_clips:
        raise ValidationFailure("data.manifest: no clips with split=train")
    train_items = _examples_from_cache(train_clips, root)
    if val_clips:
        val_items = _examples_from_cache(val_clips, root)
    else:
        train_items, val_items = carve_validation(train_items, seed=train_config.seed)

    model = SyncDetector(detector_config)
    result = train(model, train_items, val_items, train_config)
    save_run(run_dir, train_config, detector_config.to_dict(), result, model)
    print(f"run dir: {run_dir}")
    print(f"epochs run: {result.epochs_run} (best epoch {result.best_epoch})")
    print(f"best val accuracy: {result.best_val_acc:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def _load_detector(checkpoint: str | Path) -> SyncDetector:
    ckpt = Path(checkpoint)
    if ckpt.is_dir() and (ckpt / "best_checkpoint").is_dir():
        ckpt = ckpt / "best_checkpoint"  # accept a run directory directly
    if not (ckpt / "config.json").is_file():
        raise ValidationFailure(f"checkpoint not found: {checkpoint}")
    config = read_descriptor(ckpt).get("config", {})
    try:
        detector_config = DetectorConfig.from_dict(config)
    except (ValueError, TypeError, KeyError) as exc:
        raise ValidationFailure(f"checkpoint config is unusable: {exc}") from exc
    model = SyncDetector(detector_config)
    load_checkpoint(model, ckpt)
    model.eval()
    return model


def _parse_named_manifests(items: Sequence[str]) -> dict[str, Path]:
    named: dict[str, Path] = {}
    for item in items:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = Path(item).stem, item
        if name in named:
            raise ValidationFailure(f"duplicate test-set name {name!r}")
        named[name] = Path(path)
    return named


def _score_fn(model: SyncDetector, root: Path):
    def score(clip: MediaClip) -> float:
        pair = cache_mod.load_pair(clip, root)
        return model.predict(pair).fake_prob

    return score


def _emit_report(report, out_dir: Path, stem: str, roc: bool) -> None:
    write_report_json(report, out_dir / f"{stem}.json")
    (out_dir / f"{stem}.txt").write_text(render_table(report))
    if roc and report.roc is not None:
        write_roc_csv(report.roc, out_dir / f"{stem}_roc.csv")


def cmd_eval(args: argparse.Namespace) -> int:
    model = _load_detector(args.checkpoint)
    root = cache_mod.cache_root(args.cache_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    score = _score_fn(model, root)

    named = _parse_named_manifests(args.manifest)
    manifests = {name: _load_manifest_checked(path) for name, path in named.items()}

    if args.kfold:
        if len(manifests) != 1:
            raise ValidationFailure("--kfold expects exactly one manifest")
        (name, clips), = manifests.items()
        folds = make_kfold(clips, k=args.kfold, seed=args.seed)
        fold_aucs, fold_accs = [], []
        for split in folds:
            _, test_clips = fold_clips(clips, split)
            scores = [score(c) for c in test_clips]
            report = build_report(f"{name}_fold{split.fold}", test_clips, scores, with_roc=args.roc)
            _emit_report(report, out_dir, report.name, args.roc)
            print(render_table(report))
            fold_accs.append(report.accuracy)
            if report.auc is not None:
                fold_aucs.append(report.auc)
        summary = {
            "k": args.kfold,
            "mean_accuracy": float(np.mean(fold_accs)),
            "mean_auc": float(np.mean(fold_aucs)) if fold_aucs else None,
            "per_fold_accuracy": fold_accs,
            "per_fold_auc": fold_aucs or None,
        }
        (out_dir / f"{name}_kfold_summary.json").write_text(json.dumps(summary, indent=2))
        print(f"k-fold mean accuracy: {summary['mean_accuracy']:.4f}"
              + (f", mean AUC: {summary['mean_auc']:.4f}" if fold_aucs else ""))
        return EXIT_OK

    reports = evaluate_testsets(score, manifests, with_roc=args.roc)
    for name, report in reports.items():
        _emit_report(report, out_dir, name, args.roc)
        print(render_table(report))
    return EXIT_OK


# --------------------------------------------------------------------------
# export-embeddings
# --------------------------------------------------------------------------

def cmd_export_embeddings(args: argparse.Namespace) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for kind in kinds:
        if kind not in EXPORTABLE_KINDS:
            raise ValidationFailure(
                f"unknown embedding kind {kind!r}; choose from {', '.join(EXPORTABLE_KINDS)}"
            )
    if not kinds:
        raise ValidationFailure("--kinds must name at least one embedding kind")
    model = _load_detector(args.checkpoint)
    root = cache_mod.cache_root(args.cache_dir)
    clips = _load_manifest_checked(args.manifest)
    items = [(clip, cache_mod.load_pair(clip, root)) for clip in clips]
    out = export_embeddings(model, items, kinds, args.out)
    print(f"wrote {len(clips) * len(kinds)} record(s) to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# wiring
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avsf", description="Audio-visual sync-based deepfake detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="decode, crop and cache every manifest clip")
    p.add_argument("manifest", help="JSONL manifest path")
    p.add_argument("--cache-dir", default=None, help="cache root (default: $AVSF_CACHE_DIR or ./avsf_cache)")
    p.add_argument("--landmarks", default="blob", help="mouth landmark provider: blob or fixed")
    p.add_argument("--workers", type=int, default=1, help="parallel clip workers (default 1, deterministic)")
    p.add_argument("--strict", action="store_true", help="exit nonzero if any clip fails")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a detector from a JSON config")
    p.add_argument("config", help="JSON config with model/train/data sections")
    p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a config field by dotted path")
    p.add_argument("--run-dir", default=None, help="run directory (config run_dir wins)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one or more test sets")
    p.add_argument("checkpoint", help="checkpoint directory (or a run directory)")
    p.add_argument("--manifest", action="append", required=True, metavar="[NAME=]PATH",
                   help="test-set manifest; repeatable")
    p.add_argument("--out", default="eval_out", help="report output directory")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--roc", action="store_true", help="also write ROC CSVs")
    p.add_argument("--kfold", type=int, default=0, metavar="K",
                   help="evaluate per subject-disjoint fold instead of per test set")
    p.add_argument("--seed", type=int, default=0, help="fold shuffling seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-embeddings", help="dump embedding tensors for external projection")
    p.add_argument("checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kinds", default="sync", help="comma list of av,v,a,sync,fusion,pooled")
    p.add_argument("--out", default="embeddings_out")
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_export_embeddings)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (UnknownKind, UnknownMode, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AvsfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
