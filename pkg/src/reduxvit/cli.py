"""Command-line entry point.

Every subcommand resolves one ``RunConfig`` (JSON file plus flag overrides),
echoes it to ``<out>/config.lock.json`` and writes plain CSV/JSON outputs.
Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import runs
from .config import RunConfig
from .data import generate, load_checkpoint, save_checkpoint, save_dataset
from .errors import CheckpointError, ConfigError, ImageFormatError, NumericError
from .trainer import accuracy, write_reports

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="seed for both data and training")
    common.add_argument("--beta", type=float, help="weight of the entropy term (0 disables it)")
    common.add_argument("--lambda", dest="lam", type=float, help="mask threshold multiplier")
    common.add_argument("--batch-size", type=int)
    common.add_argument("--no-bdmm", action="store_true", help="single-pass training, no masking")
    common.add_argument("--fixed-ratio", type=float, help="mask this fraction instead of the adaptive ratio")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--data", metavar="DIR", help="dataset directory written by gen-data")
    common.add_argument("--checkpoint", metavar="PATH", help="checkpoint to evaluate (default <out>/checkpoint.r2tk)")

    p = argparse.ArgumentParser(prog="reduxvit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset and its manifest")
    sub.add_parser("train", parents=[common], help="train and write metrics.csv plus a checkpoint")
    sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint on both splits")
    sub.add_parser("probe-mi", parents=[common], help="per-layer I(X;T) and I(T;Y) to mi.csv")
    sub.add_parser("export-mask", parents=[common], help="mask plans for the test split to masks.csv")
    sub.add_parser("ablate", parents=[common], help="2x2 grid over masking and the entropy term")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    config = config.with_overrides(seed=args.seed, beta=args.beta, lam=args.lam,
                                   batch_size=args.batch_size, no_bdmm=args.no_bdmm,
                                   fixed_ratio=args.fixed_ratio, out=args.out)
    paths = config.paths
    if args.data is not None:
        paths = dataclasses.replace(paths, data_dir=args.data)
    if args.checkpoint is not None:
        paths = dataclasses.replace(paths, checkpoint=args.checkpoint)
    return config.replace(paths=paths)


def _out(config: RunConfig) -> Path:
    out = Path(config.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.lock.json").write_text(config.to_json())
    return out


def _params(config: RunConfig):
    ckpt = config.paths.checkpoint or str(Path(config.paths.out_dir) / "checkpoint.r2tk")
    return load_checkpoint(ckpt, config.model)


def cmd_gen_data(config: RunConfig) -> str:
    out = Path(config.paths.data_dir or Path(config.paths.out_dir) / "data")
    dataset = generate(config.data)
    path = save_dataset(dataset, out)
    return f"wrote {len(dataset)} images to {path}"


def _train_into(config: RunConfig, out: Path):
    result = runs.train_run(config)
    with open(out / "metrics.csv", "w", newline="") as fh:
        write_reports(result.reports, fh)
    save_checkpoint(result.params, out / "checkpoint.r2tk")
    (out / "summary.json").write_text(json.dumps(runs.summary(result), indent=2, sort_keys=True) + "\n")
    return result


def cmd_train(config: RunConfig) -> str:
    out = _out(config)
    result = _train_into(config, out)
    return f"train_acc={result.train_acc:.4f} test_acc={result.test_acc:.4f} -> {out}"


def cmd_eval(config: RunConfig) -> str:
    out = _out(config)
    params = _params(config)
    dataset = runs.dataset_for(config)
    scores = {split: accuracy(part.images, part.labels, params)
              for split in ("train", "test") if len(part := dataset.subset(split))}
    (out / "eval.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")
    return " ".join(f"{k}_acc={v:.4f}" for k, v in scores.items())


def cmd_probe_mi(config: RunConfig) -> str:
    out = _out(config)
    rows = runs.run_probe(_params(config), config, runs.dataset_for(config))
    (out / "mi.csv").write_text(runs.mi_csv(rows))
    return f"wrote {len(rows)} layers to {out / 'mi.csv'}"


def cmd_export_mask(config: RunConfig) -> str:
    out = _out(config)
    rows = runs.export_masks(_params(config), config, runs.dataset_for(config))
    (out / "masks.csv").write_text(runs.masks_csv(rows))
    return f"wrote {len(rows)} mask rows; redundant share {runs.redundant_share(rows):.3f}"


def cmd_ablate(config: RunConfig) -> str:
    out = _out(config)
    lines = []
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "bdmm", "beta", "train_acc", "test_acc"])
        for name, arm in runs.ablation_configs(config).items():
            result = _train_into(arm, _out(arm))
            w.writerow([name, arm.train.bdmm_enabled, repr(arm.train.ib.beta),
                        repr(result.train_acc), repr(result.test_acc)])
            lines.append(f"{name}: train_acc={result.train_acc:.4f} test_acc={result.test_acc:.4f}")
    return "\n".join(lines)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "probe-mi": cmd_probe_mi,
    "export-mask": cmd_export_mask,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = resolve_config(args)
        message = COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, ImageFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
