"""Batch-based dynamic masking.

The batch mask ratio is the mean, over images, of the fraction of patches
whose importance is strictly below ``lambda`` times that image's mean
importance.  Every image then drops the same number of patches (its least
important ones), so the second encoder pass stays rectangular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .fusion import PatchImportanceMap


@dataclass(frozen=True)
class BdmmConfig:
    lam: float = 1.0
    warmup_steps: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"bdmm.lam must be > 0, got {self.lam}")
        if self.warmup_steps < 0:
            raise ConfigError("bdmm.warmup_steps must be >= 0")


@dataclass
class MaskPlan:
    r_batch: float
    masked: list
    kept: list

    @property
    def kept_array(self) -> np.ndarray:
        return np.asarray(self.kept, dtype=np.intp).reshape(len(self.kept), -1)


def _values(maps) -> list[np.ndarray]:
    vals = [np.asarray(m.values if isinstance(m, PatchImportanceMap) else m, dtype=np.float64)
            for m in maps]
    if not vals:
        raise DimensionError("empty batch of importance maps")
    n = vals[0].shape[-1]
    if any(v.ndim != 1 or v.shape[0] != n for v in vals):
        raise DimensionError("importance maps in a batch must share one length")
    return vals


def image_ratio(values: np.ndarray, lam: float = 1.0) -> float:
    """Fraction of entries strictly below ``lam`` times the mean."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    # compare v*n < sum*lam: exact for constant maps, unlike v < mean*lam
    below = values * n < math.fsum(values) * lam
    return float(np.count_nonzero(below)) / n


def batch_mask_ratio(maps: Sequence, config: BdmmConfig = BdmmConfig()) -> float:
    vals = _values(maps)
    ratios = [image_ratio(v, config.lam) for v in vals]
    return float(np.mean(ratios))


def mask_count(r_batch: float, n: int) -> int:
    return min(int(math.floor(r_batch * n)), n - 1)


def select_mask(maps: Sequence, r_batch: float) -> MaskPlan:
    """Mask the ``floor(r_batch * N)`` least important patches of each image.

    Ties go to the lower patch index.  At least one patch always survives.
    """
    if not 0.0 <= r_batch < 1.0:
        raise ConfigError(f"r_batch must lie in [0, 1), got {r_batch}")
    vals = _values(maps)
    n = vals[0].shape[0]
    m = mask_count(r_batch, n)
    masked, kept = [], []
    for v in vals:
        order = np.argsort(v, kind="stable")
        drop = np.sort(order[:m])
        keep = np.sort(order[m:])
        masked.append([int(i) for i in drop])
        kept.append([int(i) for i in keep])
    return MaskPlan(r_batch=float(r_batch), masked=masked, kept=kept)


def apply_mask(patches: np.ndarray, masked: Sequence[int]) -> tuple[np.ndarray, list]:
    """Keep only unmasked patch rows, in original order, plus their indices."""
    patches = np.asarray(patches)
    n = patches.shape[0]
    drop = set(int(i) for i in masked)
    if any(i < 0 or i >= n for i in drop):
        raise DimensionError(f"apply_mask: index out of range for {n} patches")
    kept = [i for i in range(n) if i not in drop]
    if not kept:
        raise DimensionError("apply_mask: every patch is masked")
    return patches[kept], kept
