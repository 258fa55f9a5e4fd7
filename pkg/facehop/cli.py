"""
Command-line surface: ``facehop {train,eval,predict,inspect,augment}``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 corrupt model.
"""

import argparse
import functools
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from facehop import pipeline
from facehop.augment import balance
from facehop.classify import BASE_NAMES, Variant
from facehop.config import RunConfig, load_config
from facehop.dataset import (
    Dataset,
    ManifestRow,
    load_dataset,
    load_row,
    read_image,
    read_manifest,
    write_image,
    write_manifest,
)
from facehop.errors import DatasetIOError, FaceHopError, UsageError, ValidationError
from facehop.hoptree import energy_by_depth
from facehop.preprocess import CROP_SCALE, EYE_HEIGHT, Landmarks, preprocess_image
from facehop.saab import ChannelKind

logger = logging.getLogger(__name__)

FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
# hyperparameters a model file carries into eval; split/protocol settings are not among them
_MODEL_KEYS = (
    "variant",
    "crop_scale",
    "eye_height",
    "window",
    "patch_cap",
    "n_comp",
    "regions",
    "l2",
    "n_folds",
    "augment_ratio",
) + tuple(
    f"hop{h}_{k}" for h in (1, 2, 3) for k in ("selection", "keep", "discard", "threshold")
)


def setup_logging(verbose: bool = False) -> None:
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(FORMAT))
        root.addHandler(handler)


def cli_error_handler(func):
    """Log domain errors and turn them into the stable exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> int:
        try:
            return func(*args, **kwargs) or 0
        except FaceHopError as e:
            logger.error(f"Error in {func.__name__}: {e}", exc_info=True)
            return e.exit_code
        except OSError as e:
            logger.error(f"I/O error in {func.__name__}: {e}", exc_info=True)
            return DatasetIOError.exit_code

    return wrapper


def write_atomic(path: Path, data: bytes) -> None:
    """Write through a temporary sibling; nothing is left behind on failure."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def read_model(path) -> pipeline.FaceHopModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DatasetIOError(f"Cannot read model {path}: {e}") from e
    return pipeline.load(data)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": getattr(args, "seed", None),
        "variant": getattr(args, "variant", None),
        "manifest": str(args.manifest) if getattr(args, "manifest", None) else None,
    }


def _require_manifest(cfg: RunConfig) -> str:
    if not cfg.manifest:
        raise UsageError("No manifest given: pass --manifest or set 'manifest' in the config")
    return cfg.manifest


def _load(cfg: RunConfig) -> Dataset:
    return load_dataset(_require_manifest(cfg), cfg.crop_scale, cfg.eye_height)


def training_report(model: pipeline.FaceHopModel, result: pipeline.RepetitionResult) -> str:
    cfg = model.hop.config
    lines = ["Node counts (intermediate, leaf, discarded) vs configuration"]
    for hop, spec in enumerate(cfg.hops, start=1):
        lines.append(f"  hop-{hop}: {model.hop.kind_counts(hop)}  selection {spec.selection}")
    lines.append("Feature dimensions")
    lines += [f"  {name:<15} {length:>6d}" for name, length in model.feature_lengths().items()]
    for variant in Variant:
        lines.append(pipeline.count_parameters(model, variant).render())
    lines.append(
        f"Held-out accuracy {result.metrics.accuracy:.4f} on {result.n_test} images "
        f"({result.n_train} train + {result.n_synthesized} synthesized)"
    )
    return "\n".join(lines)


@cli_error_handler
def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    dataset = _load(cfg)
    result = pipeline.run_repetition(dataset, cfg, repetition=0)
    write_atomic(args.out, pipeline.save(result.model))
    logger.info(f"Model written to {args.out}")
    print(training_report(result.model, result))
    return 0


def eval_table(results: Sequence[pipeline.RepetitionResult], summary: Dict[str, Any]) -> str:
    lines = [f"{'repetition':>10}  {'seed':>6}  {'train':>6}  {'test':>6}  {'accuracy':>8}"]
    for r in results:
        lines.append(
            f"{r.repetition:>10d}  {r.seed:>6d}  {r.n_train:>6d}  {r.n_test:>6d}  "
            f"{100 * r.metrics.accuracy:>8.2f}"
        )
    lines.append("")
    lines.append(f"{'classifier':<15}  {'mean':>7}  {'std':>6}")
    for name in BASE_NAMES:
        base = summary["base"][name]
        lines.append(f"{name:<15}  {100 * base['mean']:>7.2f}  {100 * base['std']:>6.2f}")
    lines.append(
        f"{'ensemble':<15}  {100 * summary['accuracy_mean']:>7.2f}  "
        f"{100 * summary['accuracy_std']:>6.2f}"
    )
    return "\n".join(lines)


@cli_error_handler
def cmd_eval(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    if args.model:
        settings = read_model(args.model).settings
        inherited = {k: settings[k] for k in _MODEL_KEYS if k in settings}
        overrides = {**inherited, **{k: v for k, v in overrides.items() if v is not None}}
        logger.info(f"Reusing hyperparameters stored in {args.model}")
    cfg = load_config(args.config, overrides)
    dataset = _load(cfg)
    results = pipeline.run_protocol(dataset, cfg)
    summary = pipeline.summarize(results)
    records = [json.dumps(r.record(), sort_keys=True) for r in results]
    records.append(json.dumps({"summary": summary}, sort_keys=True))

    print(eval_table(results, summary))
    if args.out:
        write_atomic(args.out, ("\n".join(records) + "\n").encode("utf-8"))
    else:
        print("\n".join(records))
    return 0


def _parse_landmarks(text: Optional[str]) -> Optional[Landmarks]:
    if not text:
        return None
    try:
        lx, ly, rx, ry = (float(v) for v in text.split(","))
    except ValueError as e:
        raise ValidationError(f"--landmarks expects 'lx,ly,rx,ry', got '{text}'") from e
    return Landmarks(left_eye=(lx, ly), right_eye=(rx, ry))


@cli_error_handler
def cmd_predict(args: argparse.Namespace) -> int:
    model = read_model(args.model)
    crop_scale = model.settings.get("crop_scale", CROP_SCALE)
    eye_height = model.settings.get("eye_height", EYE_HEIGHT)
    if args.image:
        lm = _parse_landmarks(args.landmarks)
        img = preprocess_image(read_image(args.image), lm, crop_scale, eye_height)
        rows = [(str(args.image), img)]
    elif args.manifest:
        rows = [
            (str(row.path), load_row(row, crop_scale, eye_height))
            for row in read_manifest(args.manifest)
        ]
    else:
        raise UsageError("predict needs --image or --manifest")

    proba, labels, base = pipeline.predict_images(model, np.stack([img for _, img in rows]))
    for (source, _), p, label, row in zip(rows, proba, labels, base):
        record = {
            "image": source,
            "label": model.classes[int(label)],
            "probability": float(p),
            "base": {name: float(v) for name, v in zip(BASE_NAMES, row)},
        }
        print(json.dumps(record, sort_keys=True))
    return 0


def inspect_report(model: pipeline.FaceHopModel) -> str:
    hop = model.hop
    lines = [f"Input {hop.input_size}x{hop.input_size}, window {hop.config.window}"]
    for h in (1, 2, 3):
        nodes = hop.nodes_at(h)
        inter, leaf, discard = hop.kind_counts(h)
        lines.append(f"hop-{h}: {inter} intermediate, {leaf} leaf, {discard} discarded")
        for i, node in enumerate(nodes):
            if node.kind is ChannelKind.DISCARD:
                continue
            lines.append(
                f"  [{i}] unit {node.unit} channel {node.channel} parent {node.parent} "
                f"{node.kind.value:<12} energy {node.energy:.6e}"
            )
        dropped = sum(n.energy for n in nodes if n.kind is ChannelKind.DISCARD)
        lines.append(f"  discarded energy {dropped:.6e}")
    lines.append("Energy by depth (node sum + terminated above)")
    for depth, total, above in energy_by_depth(hop):
        lines.append(f"  hop-{depth}: {total:.8f} + {above:.8f} = {total + above:.8f}")
    for variant in Variant:
        lines.append(pipeline.count_parameters(model, variant).render())
    return "\n".join(lines)


@cli_error_handler
def cmd_inspect(args: argparse.Namespace) -> int:
    print(inspect_report(read_model(args.model)))
    return 0


@cli_error_handler
def cmd_augment(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"Output directory {out} is not empty")
    dataset = _load(cfg)
    augmented = balance(dataset.images, dataset.labels, cfg.augment_ratio, seed=cfg.seed)

    staging = out.with_name(f".{out.name}.tmp")
    shutil.rmtree(staging, ignore_errors=True)
    staging.mkdir(parents=True)
    try:
        rows: List[ManifestRow] = list(dataset.rows)
        for k, (img, label, prov) in enumerate(
            zip(augmented.images, augmented.labels, augmented.provenance)
        ):
            if prov is None:
                continue
            name = f"synth_{k:06d}.pgm"
            write_image(staging / name, img)
            rows.append(
                ManifestRow(staging / name, dataset.classes[int(label)], None, 0, str(prov))
            )
        write_manifest(staging / "manifest.csv", rows)
        if out.exists():
            out.rmdir()
        os.replace(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    print(f"Wrote {len(augmented.synthesized)} synthesized images and {out / 'manifest.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="facehop", description="FaceHop low-resolution face classifier")
    p.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(cmd: argparse.ArgumentParser) -> None:
        cmd.add_argument("--config", help="YAML config file or packaged config name (lfw, cmu)")
        cmd.add_argument("--manifest", type=Path)
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--variant", choices=[v.value for v in Variant])

    train = sub.add_parser("train", help="fit a model on the training split")
    common(train)
    train.add_argument("--out", type=Path, required=True, help="model file to write")
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("eval", help="repeated stratified train/test protocol")
    common(evaluate)
    evaluate.add_argument("--model", type=Path, help="reuse hyperparameters of this model")
    evaluate.add_argument("--out", type=Path, help="JSON-lines file for per-repetition records")
    evaluate.set_defaults(func=cmd_eval)

    predict = sub.add_parser("predict", help="classify images with a trained model")
    predict.add_argument("--model", type=Path, required=True)
    predict.add_argument("--image", type=Path)
    predict.add_argument("--landmarks", help="lx,ly,rx,ry eye coordinates in pixels")
    predict.add_argument("--manifest", type=Path)
    predict.set_defaults(func=cmd_predict)

    inspect = sub.add_parser("inspect", help="print the Saab tree and parameter counts")
    inspect.add_argument("--model", type=Path, required=True)
    inspect.set_defaults(func=cmd_inspect)

    augment = sub.add_parser("augment", help="write a class-balanced manifest")
    common(augment)
    augment.add_argument("--out", type=Path, required=True, help="output directory")
    augment.set_defaults(func=cmd_augment)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
