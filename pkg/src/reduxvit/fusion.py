"""Fuse attention maps from every layer and head into patch importances.

All three steps broadcast over leading axes, so a batched trace of shape
``(B, L, K, S, S)`` yields ``B`` importance maps in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError


@dataclass
class PatchImportanceMap:
    values: np.ndarray
    image_id: Optional[str] = None

    def __len__(self) -> int:
        return int(self.values.shape[-1])


def _maps(trace) -> np.ndarray:
    attn = trace.attn if hasattr(trace, "attn") else trace
    if attn is None:
        raise DimensionError("fuse: trace holds no attention maps")
    attn = np.asarray(attn)
    if attn.ndim < 4 or attn.shape[-4] == 0 or attn.shape[-3] == 0:
        raise DimensionError(f"fuse: expected (..., L, K, S, S) maps, got shape {attn.shape}")
    if attn.shape[-1] != attn.shape[-2]:
        raise DimensionError(f"fuse: attention maps are not square: {attn.shape[-2:]}")
    return attn


def fuse(trace) -> np.ndarray:
    """Plain mean of all ``L*K`` attention maps (a ForwardTrace or raw array).

    A list of per-layer lists of maps is also accepted; maps must all share
    one shape.
    """
    if isinstance(trace, (list, tuple)):
        flat = [np.asarray(m) for layer in trace for m in layer]
        if not flat:
            raise DimensionError("fuse: empty trace")
        if any(m.shape != flat[0].shape for m in flat):
            raise DimensionError("fuse: attention maps disagree in shape")
        return np.mean(np.stack(flat), axis=0)
    attn = _maps(trace)
    return attn.mean(axis=(-4, -3))


def row_average(wtilde: np.ndarray) -> np.ndarray:
    """Average of all rows, class-token row included: ``(S, S) -> (S,)``."""
    wtilde = np.asarray(wtilde)
    if wtilde.ndim < 2 or wtilde.shape[-1] != wtilde.shape[-2]:
        raise DimensionError(f"row_average needs a square matrix, got {wtilde.shape}")
    return wtilde.mean(axis=-2)


def strip_class(vtilde: np.ndarray) -> np.ndarray:
    """Drop the class-token entry; the rest is returned as-is, not renormalized."""
    vtilde = np.asarray(vtilde)
    if vtilde.shape[-1] < 2:
        raise DimensionError("strip_class needs at least one patch entry")
    return vtilde[..., 1:]


def importance_maps(trace, image_ids=None) -> list[PatchImportanceMap]:
    """Per-image importance maps from a batched trace."""
    vp = strip_class(row_average(fuse(trace)))
    if vp.ndim == 1:
        vp = vp[None]
    if image_ids is None:
        image_ids = [None] * len(vp)
    return [PatchImportanceMap(values=v, image_id=i) for v, i in zip(vp, image_ids)]
