"""Two-pass training with dynamic masking and the entropy-regularized loss.

Each step runs the full image through the encoder, turns the fused attention
into a mask, runs the surviving patches through the same parameters again,
and trains on both class tokens.  Inference is always a single full pass.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Iterator, Optional

import numpy as np

from . import autodiff as ad
from .bdmm import BdmmConfig, MaskPlan, batch_mask_ratio, select_mask
from .errors import ConfigError, NumericError
from .fusion import importance_maps
from .renyi import IbConfig, feature_entropy, gram_gaussian, ib_terms, label_gram, mutual_information
from .vit import Params, encode, embed, forward_kept, image_patches

CSV_HEADER = ("step", "loss_total", "loss_ce_full", "loss_ce_masked", "entropy_full",
              "entropy_masked", "r_batch", "acc")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 24
    lr: float = 1e-2
    momentum: float = 0.9
    grad_clip: Optional[float] = 1.0
    total_steps: int = 500
    seed: int = 0
    bdmm_enabled: bool = True
    fixed_ratio: Optional[float] = None
    ib: IbConfig = field(default_factory=IbConfig)
    bdmm: BdmmConfig = field(default_factory=BdmmConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.ib.beta > 0 and self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 when the IB term is enabled (beta > 0)")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("train.momentum must lie in [0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("train.grad_clip must be > 0 (or null to disable)")
        if self.total_steps < 0:
            raise ConfigError("train.total_steps must be >= 0")
        if self.fixed_ratio is not None and not 0 <= self.fixed_ratio < 1:
            raise ConfigError("train.fixed_ratio must lie in [0, 1)")


@dataclass
class StepReport:
    step: int
    loss_total: float
    loss_ce_full: float
    loss_ce_masked: float
    entropy_full: float
    entropy_masked: float
    r_batch: float
    acc: float

    def row(self) -> list[str]:
        return [str(self.step)] + [repr(float(getattr(self, f.name))) for f in fields(self)[1:]]


def write_reports(reports, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.row())


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    write_reports(reports, buf)
    return buf.getvalue()


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class SGD:
    """SGD with heavy-ball momentum: ``v = mu*v + g; p -= lr*v``.

    With ``clip`` set, the global gradient norm is capped before the update.
    """

    def __init__(self, params: Params, momentum: float = 0.9, clip: Optional[float] = None):
        self.params = params
        self.momentum = momentum
        self.clip = clip
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def grad_norm(self) -> float:
        return math.sqrt(math.fsum(float(np.sum(t.grad.astype(np.float64) ** 2))
                                   for t in self.params.values() if t.grad is not None))

    def step(self, lr: float) -> None:
        if self.clip is not None:
            norm = self.grad_norm()
            if norm > self.clip:
                factor = self.clip / norm
                for t in self.params.values():
                    if t.grad is not None:
                        t.grad *= t.grad.dtype.type(factor)
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data -= t.data.dtype.type(lr) * v


def _entropy_value(tokens, ib: IbConfig) -> float:
    if tokens.shape[0] < 2:
        return 0.0
    return float(feature_entropy(tokens.data, ib).data)


def bdmm_active(config: TrainConfig, step: int) -> bool:
    return config.bdmm_enabled and step >= config.bdmm.warmup_steps


def plan_masks(trace, config: TrainConfig) -> MaskPlan:
    """Importance maps from the full-pass attention, then the batch mask plan."""
    maps = importance_maps(trace)
    n = len(maps[0])
    if config.fixed_ratio is not None:
        r = config.fixed_ratio
    else:
        r = batch_mask_ratio(maps, config.bdmm)
    return select_mask(maps, min(r, (n - 1) / n))


def compute_losses(params: Params, images: np.ndarray, labels: np.ndarray, config: TrainConfig,
                   step: int = 0, plan: Optional[MaskPlan] = None,
                   on_pass: Optional[Callable[[int, Params], None]] = None):
    """Build the step's loss graph; returns ``(total, parts, plan)``.

    ``plan`` overrides mask selection (used to hold the mask fixed while
    probing gradients).  ``on_pass`` is called before each encoder pass.
    """
    labels = np.asarray(labels)
    ib = config.ib
    patches = image_patches(images, params.config)
    two_pass = bdmm_active(config, step)
    if on_pass:
        on_pass(1, params)
    logits_f, trace_f = encode(embed(patches, params), params, collect_trace=two_pass and plan is None)
    tok_f = trace_f.cls_by_layer[-1]
    loss_f, ce_f, h_f = ib_terms(logits_f, labels, tok_f, ib)
    parts = {"logits_full": logits_f, "ce_full": ce_f, "h_full": h_f, "tok_full": tok_f}
    if not two_pass:
        return loss_f, parts, None
    if plan is None:
        plan = plan_masks(trace_f, config)
    if on_pass:
        on_pass(2, params)
    logits_m, trace_m = forward_kept(patches, plan.kept_array, params)
    tok_m = trace_m.cls_by_layer[-1]
    _, ce_m, h_m = ib_terms(logits_m, labels, tok_m, ib)
    total = ad.scale(ad.add(ce_f, ce_m), 0.5)
    if h_f is not None:
        reg = ad.scale(ad.add(h_f, h_m), 0.5 * ib.beta)
        total = ad.add(total, ad.cast(reg, total.dtype))
    parts.update({"logits_masked": logits_m, "ce_masked": ce_m, "h_masked": h_m, "tok_masked": tok_m})
    return total, parts, plan


def train_step(images, labels, params: Params, optimizer: SGD, config: TrainConfig, step: int,
               on_pass=None) -> StepReport:
    total, parts, plan = compute_losses(params, images, labels, config, step, on_pass=on_pass)
    if not np.isfinite(total.data):
        raise NumericError(f"non-finite loss at step {step}")
    params.zero_grad()
    total.backward()
    optimizer.step(cosine_lr(step, config.total_steps, config.lr))

    ib = config.ib
    ce_f = float(parts["ce_full"].data)
    h_f = float(parts["h_full"].data) if parts["h_full"] is not None else _entropy_value(parts["tok_full"], ib)
    if plan is None:
        ce_m, h_m, r = ce_f, h_f, 0.0
    else:
        ce_m = float(parts["ce_masked"].data)
        h_m = (float(parts["h_masked"].data) if parts["h_masked"] is not None
               else _entropy_value(parts["tok_masked"], ib))
        r = plan.r_batch
    acc = float(np.mean(parts["logits_full"].data.argmax(axis=1) == np.asarray(labels)))
    report = StepReport(step, float(total.data), ce_f, ce_m, h_f, h_m, r, acc)
    if not all(math.isfinite(v) for v in (report.loss_total, ce_m, h_f, h_m)):
        raise NumericError(f"non-finite report values at step {step}")
    return report


def batches(num_items: int, batch_size: int, total_steps: int, seed: int) -> Iterator[np.ndarray]:
    """Index batches from per-epoch shuffles; incomplete tail batches are dropped."""
    rng = np.random.default_rng([seed, 0xBA7C])
    per_epoch = max(num_items // batch_size, 1)
    produced = 0
    while produced < total_steps:
        order = rng.permutation(num_items)
        for b in range(per_epoch):
            if produced >= total_steps:
                return
            yield order[b * batch_size:(b + 1) * batch_size]
            produced += 1


class Trainer:
    def __init__(self, params: Params, config: TrainConfig):
        self.params = params
        self.config = config
        self.optimizer = SGD(params, config.momentum, config.grad_clip)
        self.step = 0
        self.reports: list[StepReport] = []

    def fit(self, images: np.ndarray, labels: np.ndarray, callback=None) -> list[StepReport]:
        cfg = self.config
        if cfg.ib.beta > 0 and min(cfg.batch_size, len(labels)) < 2:
            raise ConfigError("the IB term needs at least 2 images per batch")
        for idx in batches(len(labels), cfg.batch_size, cfg.total_steps, cfg.seed):
            rep = train_step(images[idx], labels[idx], self.params, self.optimizer, cfg, self.step)
            self.reports.append(rep)
            if callback:
                callback(rep)
            self.step += 1
        return self.reports


def predict(images: np.ndarray, params: Params, batch_size: int = 64):
    """Single unmasked pass; returns ``(classes, logits)``."""
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    out = []
    for s in range(0, len(images), batch_size):
        logits, _ = encode(embed(image_patches(images[s:s + batch_size], params.config), params), params)
        out.append(logits.data)
    logits = np.concatenate(out, axis=0)
    classes = logits.argmax(axis=1)
    if single:
        return int(classes[0]), logits[0]
    return classes, logits


def accuracy(images, labels, params: Params) -> float:
    classes, _ = predict(images, params)
    return float(np.mean(classes == np.asarray(labels)))


@dataclass
class LayerMI:
    layer: int
    i_xt: float
    i_ty: float


def probe_mi(images: np.ndarray, labels, params: Params, ib: IbConfig = IbConfig(),
             x_source: str = "pixels") -> list[LayerMI]:
    """Per-layer ``I(X; T_l)`` and ``I(T_l; Y)`` over one evaluation batch.

    ``X`` is the flattened raw image (``x_source="pixels"``) or the embedded
    token sequence (``"embedding"``); ``Y`` uses a same-label delta kernel.
    Small negative estimates are clamped to zero.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) < 2:
        raise ConfigError("probe_mi needs an evaluation batch of at least 2 images")
    x0 = embed(image_patches(images, params.config), params)
    _, trace = encode(x0, params)
    if x_source == "pixels":
        x_feat = images.reshape(len(images), -1)
    elif x_source == "embedding":
        x_feat = x0.data.reshape(len(images), -1)
    else:
        raise ConfigError(f"unknown x_source {x_source!r}; use 'pixels' or 'embedding'")
    kx = gram_gaussian(x_feat, ib)
    ky = label_gram(labels)
    rows = []
    for l, tok in enumerate(trace.cls_by_layer):
        kt = gram_gaussian(tok.data, ib)
        i_xt = float(mutual_information(kx, kt, ib.alpha).data)
        i_ty = float(mutual_information(kt, ky, ib.alpha).data)
        rows.append(LayerMI(l + 1, max(i_xt, 0.0), max(i_ty, 0.0)))
    return rows
