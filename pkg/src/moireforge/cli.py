"""Command-line pipeline: preprocess -> train-synth -> calibrate -> gen-pairs
-> train-demoire -> evaluate -> report.

Each stage reads/writes explicit artifacts under the configured output root
and stamps them with the resolved config hash; a stage refuses inputs
produced under a different config. Exit codes: 0 success, 1 usage,
2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from . import data_pipeline, demoire, denoise, moire_prior, pair_factory, synthesis
from .config import RunConfig, load_config
from .errors import DataError, MoireforgeError, TrainingError

logger = logging.getLogger("moireforge")

STANDARD_CROPS = (192, 384, 768)


class UsageError(MoireforgeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="run seed override")
    parser.add_argument(
        "--crop-size", type=int, choices=STANDARD_CROPS, default=None,
        help="random crop size override (other sizes via the config file)",
    )
    parser.add_argument("--out", type=Path, default=None, help="output root override")


def _resolve(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "crop_size": args.crop_size,
        "out_root": str(args.out) if args.out is not None else None,
    }
    return load_config(args.config, overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="moireforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="split images into patch store + grouping")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-synth", help="train one group's synthesis networks")
    _add_common(p)
    p.add_argument("--group", type=int, choices=(1, 2, 3, 4), required=True)
    p.set_defaults(func=cmd_train_synth)

    p = sub.add_parser("calibrate", help="calibrate denoise thresholds per group")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gen-pairs", help="materialize a pseudo-pair store")
    _add_common(p)
    p.add_argument("--count", type=int, default=None, help="pair count override")
    p.set_defaults(func=cmd_gen_pairs)

    p = sub.add_parser("train-demoire", help="train a demoireing model on pairs")
    _add_common(p)
    p.set_defaults(func=cmd_train_demoire)

    p = sub.add_parser("evaluate", help="evaluate a model on paired test images")
    _add_common(p)
    p.add_argument(
        "--model", default=None,
        help="checkpoint path or registered model name (default: trained checkpoint)",
    )
    p.add_argument("--label", default=None, help="report filename label")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="compare evaluation reports")
    _add_common(p)
    p.add_argument("--inputs", type=Path, nargs="+", required=True,
                   help="evaluation report CSVs")
    p.add_argument("--labels", nargs="*", default=None)
    p.set_defaults(func=cmd_report)

    return parser


# --------------------------------------------------------------------------
# Stage helpers
# --------------------------------------------------------------------------

def _load_store_and_grouping(cfg: RunConfig):
    config_mod.check_stage_meta(cfg.patch_store_dir, cfg, "preprocess")
    patches = data_pipeline.read_patch_store(cfg.patch_store_dir)
    group_of = moire_prior.read_grouping_manifest(cfg.grouping_manifest_path)
    groups: dict[int, list[data_pipeline.Patch]] = {1: [], 2: [], 3: [], 4: []}
    free_set = []
    for patch in patches:
        ref = data_pipeline.patch_filename(patch)
        if patch.role == "moire":
            groups[group_of[ref]].append(patch)
        else:
            free_set.append(patch)
    return groups, free_set


def _load_bundles(cfg: RunConfig) -> dict[int, synthesis.SynthesisBundle]:
    bundles = {}
    for gid in (1, 2, 3, 4):
        ckpt_dir = cfg.synth_checkpoint_dir(gid)
        found = sorted(ckpt_dir.glob("epoch_*.pt")) if ckpt_dir.is_dir() else []
        if not found:
            raise DataError(
                f"no trained synthesis checkpoint for group {gid} in {ckpt_dir}; "
                f"run train-synth --group {gid} first"
            )
        config_mod.check_stage_meta(ckpt_dir, cfg, "train-synth")
        bundles[gid] = synthesis.load_bundle(found[-1])
    return bundles


def _load_test_pairs(cfg: RunConfig):
    if not cfg.test_moire_dir or not cfg.test_clean_dir:
        raise DataError("config must set test_moire_dir and test_clean_dir")
    moire = data_pipeline.load_image_set(cfg.test_moire_dir, "moire")
    clean = data_pipeline.load_image_set(cfg.test_clean_dir, "moire_free")
    clean_by_id = {rec.id: rec for rec in clean}
    pairs, names = [], []
    for rec in moire:
        if rec.id not in clean_by_id:
            raise DataError(f"test image {rec.id} has no clean counterpart")
        pairs.append((rec.pixels, clean_by_id[rec.id].pixels))
        names.append(rec.id)
    return pairs, names


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = _resolve(args)
    if not cfg.moire_dir or not cfg.moire_free_dir:
        raise DataError("config must set moire_dir and moire_free_dir")
    patches = []
    for directory, role in ((cfg.moire_dir, "moire"), (cfg.moire_free_dir, "moire_free")):
        for record in data_pipeline.load_image_set(directory, role):
            patches.extend(
                data_pipeline.split_into_patches(
                    record, cfg.cells, min_patch_side=cfg.crop_size
                )
            )
    data_pipeline.write_patch_store(patches, cfg.patch_store_dir)
    config_mod.write_stage_meta(cfg.patch_store_dir, cfg, "preprocess")

    scores = [
        moire_prior.score_patch(p, data_pipeline.patch_filename(p))
        for p in patches
        if p.role == "moire"
    ]
    assignments = moire_prior.group_patches(scores)
    cfg.grouping_manifest_path.parent.mkdir(parents=True, exist_ok=True)
    moire_prior.write_grouping_manifest(scores, assignments, cfg.grouping_manifest_path)
    logger.info("preprocess: %d patches, %d moire patches grouped",
                len(patches), len(scores))
    return 0


def cmd_train_synth(args) -> int:
    cfg = _resolve(args)
    groups, free_set = _load_store_and_grouping(cfg)
    group = groups[args.group]
    ckpt_dir = cfg.synth_checkpoint_dir(args.group)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / "losses.jsonl"

    trainer = synthesis.SynthesisTrainer(
        group_id=args.group,
        group=group,
        free_set=free_set,
        crop_size=cfg.crop_size,
        seed=cfg.seed,
        epochs=cfg.synth_epochs,
        batch_size=cfg.batch_size,
        initial_lr=cfg.learning_rate,
        betas=cfg.betas,
        checkpoint_dir=ckpt_dir,
        log_fn=lambda e, s, b: synthesis.append_loss_log(log_path, e, s, b),
    )
    if trainer.latest_checkpoint() is None and log_path.exists():
        log_path.unlink()
    config_mod.write_stage_meta(ckpt_dir, cfg, "train-synth")
    bundle = trainer.run(resume=True)
    logger.info("train-synth: group %d trained to epoch %d", args.group, bundle.epoch)
    return 0


def cmd_calibrate(args) -> int:
    cfg = _resolve(args)
    groups, free_set = _load_store_and_grouping(cfg)
    bundles = _load_bundles(cfg)
    table = denoise.ThresholdTable(config_hash=cfg.config_hash())
    rng = np.random.default_rng([cfg.seed, 100])
    for gid, bundle in sorted(bundles.items()):
        entry = denoise.calibrate_threshold(
            bundle,
            groups[gid],
            free_set,
            gamma_percent=cfg.gammas[gid],
            rng=rng,
            n_samples=cfg.n_calibration,
        )
        table.set(gid, cfg.crop_size, entry)
        logger.info("calibrate: group %d gamma %d -> threshold %.4f",
                    gid, entry.gamma_percent, entry.threshold_value)
    cfg.threshold_table_path.parent.mkdir(parents=True, exist_ok=True)
    table.save(cfg.threshold_table_path)
    return 0


def cmd_gen_pairs(args) -> int:
    cfg = _resolve(args)
    groups, free_set = _load_store_and_grouping(cfg)
    bundles = _load_bundles(cfg)
    table = denoise.ThresholdTable.load(cfg.threshold_table_path)
    if table.config_hash != cfg.config_hash():
        raise DataError(
            f"threshold table hash {table.config_hash} does not match current "
            f"config {cfg.config_hash()}"
        )
    count = args.count if args.count is not None else cfg.pairs_count
    rng = np.random.default_rng([cfg.seed, 200])
    manifest = pair_factory.generate_dataset(
        count=count,
        output_path=cfg.pair_store_dir,
        bundles=bundles,
        groups=groups,
        free_set=free_set,
        table=table,
        rng=rng,
        retry_cap=cfg.retry_cap,
        config_hash=cfg.config_hash(),
    )
    logger.info("gen-pairs: wrote %d pairs, manifest %s", count, manifest)
    return 0


def cmd_train_demoire(args) -> int:
    cfg = _resolve(args)
    pairs = pair_factory.read_pair_store(cfg.pair_store_dir)
    manifest = json.loads((cfg.pair_store_dir / "manifest.json").read_text())
    if manifest.get("config_hash") != cfg.config_hash():
        raise DataError(
            f"pair store hash {manifest.get('config_hash')} does not match "
            f"current config {cfg.config_hash()}"
        )
    gen = torch.Generator().manual_seed(cfg.seed)
    model = demoire.build_model(cfg.demoire_model, gen)
    if cfg.demoire_steps is not None:
        steps = cfg.demoire_steps
    else:
        steps = cfg.demoire_epochs * math.ceil(len(pairs) / cfg.batch_size)
    rng = np.random.default_rng([cfg.seed, 300])
    demoire.train_demoire(
        model,
        pairs,
        steps=steps,
        rng=rng,
        batch_size=cfg.batch_size,
        lr=cfg.learning_rate,
        betas=cfg.betas,
        checkpoint_path=cfg.demoire_checkpoint_path,
        log_fn=lambda step, loss: logger.info("train-demoire step %d loss %.5f",
                                              step, loss)
        if step % 50 == 0 else None,
    )
    config_mod.write_stage_meta(cfg.demoire_checkpoint_path.parent, cfg,
                                "train-demoire")
    logger.info("train-demoire: %d steps done, checkpoint %s",
                steps, cfg.demoire_checkpoint_path)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    pairs, names = _load_test_pairs(cfg)
    model_arg = args.model
    if model_arg is None:
        model_arg = str(cfg.demoire_checkpoint_path)
    if model_arg in demoire.MODEL_REGISTRY:
        model = demoire.build_model(model_arg, torch.Generator().manual_seed(cfg.seed))
        label = args.label or model_arg
    else:
        model = demoire.load_model(model_arg)
        label = args.label or getattr(model, "name", "model")
    report = demoire.evaluate(model, pairs, names)
    cfg.eval_dir.mkdir(parents=True, exist_ok=True)
    out_csv = cfg.eval_dir / f"report_{label}.csv"
    report.write_csv(out_csv)
    config_mod.write_stage_meta(cfg.eval_dir, cfg, "evaluate")
    print(f"evaluate[{label}]: mean PSNR {report.mean_psnr_db:.3f} dB, "
          f"mean SSIM {report.mean_ssim:.4f}"
          + ("" if report.mean_lpips is None
             else f", mean LPIPS {report.mean_lpips:.4f}"))
    return 0


def cmd_report(args) -> int:
    import csv

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = _resolve(args)
    labels = args.labels
    if labels and len(labels) != len(args.inputs):
        raise UsageError("--labels must match the number of --inputs")
    rows = []
    for i, path in enumerate(args.inputs):
        if not path.is_file():
            raise DataError(f"evaluation report not found: {path}")
        with open(path) as fh:
            records = list(csv.DictReader(fh))
        summary = [r for r in records if r["name"] == "mean"]
        if not summary:
            raise DataError(f"report {path} has no summary row")
        label = labels[i] if labels else path.stem.removeprefix("report_")
        rows.append(
            {"run": label,
             "mean_psnr_db": float(summary[0]["psnr_db"]),
             "mean_ssim": float(summary[0]["ssim"])}
        )

    report_dir = cfg.path("report")
    report_dir.mkdir(parents=True, exist_ok=True)
    with open(report_dir / "comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run", "mean_psnr_db", "mean_ssim"])
        writer.writeheader()
        writer.writerows(rows)

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    names = [r["run"] for r in rows]
    axes[0].bar(names, [r["mean_psnr_db"] for r in rows], color="tab:blue")
    axes[0].set_ylabel("mean PSNR (dB)")
    axes[1].bar(names, [r["mean_ssim"] for r in rows], color="tab:orange")
    axes[1].set_ylabel("mean SSIM")
    for ax in axes:
        ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(report_dir / "comparison.png", dpi=120)
    plt.close(fig)
    for r in rows:
        print(f"report: {r['run']}: PSNR {r['mean_psnr_db']:.3f} dB, "
              f"SSIM {r['mean_ssim']:.4f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
