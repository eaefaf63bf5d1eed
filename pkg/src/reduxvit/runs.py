"""End-to-end workflows shared by the command line and the demos."""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .errors import ConfigError
from .data import FOREGROUND, ROLE_NAMES, Dataset, generate, load_dataset
from .trainer import LayerMI, Trainer, accuracy, plan_masks, probe_mi
from .vit import Params, forward_images, init_params


@dataclass
class RunResult:
    config: RunConfig
    params: Params
    reports: list
    train_acc: float
    test_acc: float


def dataset_for(config: RunConfig) -> Dataset:
    """The dataset stored at ``paths.data_dir``, or a fresh one generated in memory.

    Generation quantizes to 8 bits, so a dataset written by ``gen-data`` and
    read back is identical to the in-memory one with the same spec.
    """
    if not config.paths.data_dir:
        return generate(config.data)
    manifest = Path(config.paths.data_dir) / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.json under {config.paths.data_dir}")
    dataset = load_dataset(manifest)
    m, s = config.model, dataset.spec
    for name in ("image_h", "image_w", "channels", "patch", "num_classes"):
        if getattr(m, name) != getattr(s, name):
            raise ConfigError(f"dataset {name}={getattr(s, name)} does not match model.{name}={getattr(m, name)}")
    return dataset


def train_run(config: RunConfig, dataset: Optional[Dataset] = None) -> RunResult:
    dataset = dataset if dataset is not None else dataset_for(config)
    train, test = dataset.train, dataset.test
    params = init_params(config.model, config.train.seed)
    reports = Trainer(params, config.train).fit(train.images, train.labels)
    test_acc = accuracy(test.images, test.labels, params) if len(test) else float("nan")
    return RunResult(config, params, reports, accuracy(train.images, train.labels, params), test_acc)


def probe_split(config: RunConfig, dataset: Dataset) -> Dataset:
    part = dataset.subset(config.probe.split)
    n = min(len(part), config.probe.max_images)
    return Dataset(part.spec, part.images[:n], part.labels[:n], part.roles[:n], part.split[:n],
                   part.ids[:n])


def run_probe(params: Params, config: RunConfig, dataset: Dataset) -> list[LayerMI]:
    part = probe_split(config, dataset)
    return probe_mi(part.images, part.labels, params, config.train.ib, config.probe.x_source)


def mi_csv(rows: list[LayerMI]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "I_XT", "I_TY"])
    for r in rows:
        w.writerow([r.layer, repr(r.i_xt), repr(r.i_ty)])
    return buf.getvalue()


@dataclass
class MaskRow:
    image_id: str
    r_batch: float
    masked: list
    roles: list


def export_masks(params: Params, config: RunConfig, dataset: Dataset, split: str = "test") -> list[MaskRow]:
    """Full pass, fusion and mask planning over one split, batch by batch.

    Masks are planned as in training, so ``train.fixed_ratio`` and
    ``train.bdmm.lam`` apply; the last batch may be smaller.
    """
    part = dataset.subset(split)
    bs = config.train.batch_size
    rows = []
    for s in range(0, len(part), bs):
        _, trace = forward_images(part.images[s:s + bs], params, collect_trace=True)
        plan = plan_masks(trace, config.train)
        for i, masked in enumerate(plan.masked):
            roles = [ROLE_NAMES[r] for r in part.roles[s + i][masked]]
            rows.append(MaskRow(part.ids[s + i], plan.r_batch, list(masked), roles))
    return rows


def masks_csv(rows: list[MaskRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "r_batch", "masked_indices", "masked_roles"])
    for r in rows:
        w.writerow([r.image_id, repr(r.r_batch), " ".join(map(str, r.masked)), " ".join(r.roles)])
    return buf.getvalue()


def redundant_share(rows: list[MaskRow]) -> float:
    """Fraction of masked patches that are background or cue (NaN if none masked)."""
    total = sum(len(r.roles) for r in rows)
    if total == 0:
        return float("nan")
    return sum(role != ROLE_NAMES[FOREGROUND] for r in rows for role in r.roles) / total


def redundant_base_rate(dataset: Dataset, split: str = "test") -> float:
    return float(np.mean(dataset.subset(split).roles != FOREGROUND))


ABLATION_ARMS = (
    ("full", True, None),
    ("no_ib", True, 0.0),
    ("no_bdmm", False, None),
    ("baseline", False, 0.0),
)


def ablation_configs(config: RunConfig) -> dict[str, RunConfig]:
    """The 2x2 grid {BDMM on/off} x {configured beta / 0} from one base config."""
    out = {}
    for name, bdmm_on, beta in ABLATION_ARMS:
        train = dataclasses.replace(config.train, bdmm_enabled=bdmm_on)
        if beta is not None:
            train = dataclasses.replace(train, ib=dataclasses.replace(train.ib, beta=beta))
        paths = dataclasses.replace(config.paths, out_dir=str(Path(config.paths.out_dir) / name))
        out[name] = dataclasses.replace(config, train=train, paths=paths)
    return out


def summary(result: RunResult) -> dict:
    last = result.reports[-1] if result.reports else None
    return {
        "steps": len(result.reports),
        "train_acc": result.train_acc,
        "test_acc": result.test_acc,
        "final_loss": last.loss_total if last else None,
        "param_sha256": result.params.checksum(),
    }
