"""Command-line surface: ``scafusion <gen|train|eval|infer|gradcheck|ablate>``."""

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

from scafusion.config import RunConfig
from scafusion.entities.scafusion_model import SCAFusionModel
from scafusion.errors import ScafusionError
from scafusion.services.ablation import AblationService, write_ablation
from scafusion.services.checkpoint import load_checkpoint
from scafusion.services.dataset_io import (
    read_dataset,
    read_sample,
    read_splits,
    write_dataset,
)
from scafusion.services.evaluation_service import EvaluationService
from scafusion.services.gradcheck_suite import DEFAULT_INSTANCES, run_suite
from scafusion.services.metrics import write_report
from scafusion.services.scene_generator import generate_samples
from scafusion.services.trainer import TrainerService
from scafusion.services.visualization import render_bev, write_bev

logger = logging.getLogger("scafusion")

CHECKPOINT_DIR = "checkpoint"


def _config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    return config.with_overrides(seed=args.seed, out=args.out)


def _checkpoint_config(
    args: argparse.Namespace, config: RunConfig
) -> tuple[SCAFusionModel, RunConfig]:
    if args.checkpoint:
        path = Path(args.checkpoint)
    else:
        path = Path(config.out) / CHECKPOINT_DIR
    model, stored = load_checkpoint(path)
    logger.info("loaded checkpoint %s", path)
    return model, dataclasses.replace(
        stored, dataset=config.dataset, eval=config.eval, out=config.out
    )


def command_gen(args: argparse.Namespace) -> int:
    config = _config(args)
    root = Path(args.out) if args.out else Path(config.dataset.root)
    dataset = config.dataset
    samples = generate_samples(config.scene, dataset.num_samples, dataset.workers)
    split_at = len(samples) - dataset.val_samples
    splits = {
        "train": [s.token for s in samples[:split_at]],
        "val": [s.token for s in samples[split_at:]],
    }
    write_dataset(root, samples, splits)
    logger.info("dataset with %d samples written to %s", len(samples), root)
    return 0


def command_train(args: argparse.Namespace) -> int:
    config = _config(args)
    samples = read_dataset(config.dataset.root, split="train")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
    result = TrainerService(config).train(samples, out_dir=out)
    logger.info("final loss %.6f", result.final_loss)
    return 0


def command_eval(args: argparse.Namespace) -> int:
    model, config = _checkpoint_config(args, _config(args))
    samples = read_dataset(config.dataset.root, split=config.eval.split)
    if not samples:
        logger.warning(
            "split %r of %s is empty", config.eval.split, config.dataset.root
        )
    report = EvaluationService(config).evaluate(model, samples)
    write_report(report, config.out)
    return 0


def command_infer(args: argparse.Namespace) -> int:
    model, config = _checkpoint_config(args, _config(args))
    token = args.token
    if token is None:
        splits = read_splits(config.dataset.root)
        tokens = splits.get(config.eval.split) or splits.get("train") or []
        if not tokens:
            raise ScafusionError(
                f"{config.dataset.root} holds no samples to run inference on"
            )
        token = tokens[0]
    sample = read_sample(config.dataset.root, token)
    boxes = EvaluationService(config).predict(model, [sample])[0]
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"infer_{token}.json"
    payload = {"token": token, "boxes": [box.to_dict() for box in boxes]}
    path.write_text(json.dumps(payload, indent=2))
    logger.info("%d boxes for %s written to %s", len(boxes), token, path)
    if args.viz:
        image = render_bev(
            config.grid.to_spec(), sample.point_cloud, list(sample.boxes), boxes
        )
        write_bev(out / f"bev_{token}.ppm", image)
    return 0


def command_gradcheck(args: argparse.Namespace) -> int:
    results = run_suite(instances=args.instances, seed=args.seed or 0)
    out = Path(args.out) if args.out else Path(RunConfig().out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "gradcheck.csv").open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["check", "max_relative_error", "passed"])
        writer.writerows((r.name, r.max_error, r.passed) for r in results)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("gradient checks failed: %s", ", ".join(failed))
        return 1
    return 0


def command_ablate(args: argparse.Namespace) -> int:
    config = _config(args)
    rows = AblationService(config).run()
    write_ablation(rows, config.out)
    return 0


COMMANDS: dict[str, tuple[Callable[[argparse.Namespace], int], str]] = {
    "gen": (command_gen, "generate a synthetic desk-scale dataset"),
    "train": (command_train, "train a model on the dataset's train split"),
    "eval": (command_eval, "evaluate a checkpoint and write report.json/csv"),
    "infer": (command_infer, "predict boxes for one sample, optionally as BEV image"),
    "gradcheck": (command_gradcheck, "run the finite-difference gradient suite"),
    "ablate": (command_ablate, "train and score the module toggle matrix"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scafusion", description="Desk-scale camera-LiDAR BEV fusion detector."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (handler, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument(
            "--config", help="run configuration JSON (defaults when omitted)"
        )
        sub.add_argument(
            "--seed", type=int, help="override the scene and optimizer seed"
        )
        sub.add_argument("--out", help="override the output directory")
        sub.add_argument("--verbose", action="store_true", help="log at DEBUG level")
        if name in ("eval", "infer"):
            sub.add_argument(
                "--checkpoint", help="checkpoint directory (default: <out>/checkpoint)"
            )
        if name == "infer":
            sub.add_argument(
                "--token", help="sample token (default: first sample of the eval split)"
            )
            sub.add_argument(
                "--viz", action="store_true", help="also write a BEV PPM image"
            )
        if name == "gradcheck":
            sub.add_argument(
                "--instances",
                type=int,
                default=DEFAULT_INSTANCES,
                help="random instances per check",
            )
        sub.set_defaults(handler=handler)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except ScafusionError as error:
        logger.error("%s", error)
        return 1


if __name__ == "__main__":
    sys.exit(main())
