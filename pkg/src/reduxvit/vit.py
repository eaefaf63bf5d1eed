"""A small pre-norm Vision Transformer that exposes its attention maps.

Tokens are processed in batches of shape ``(B, S, D)`` where ``S`` is the
class token plus however many patch tokens survive masking.  A single image
can be passed as ``(S, D)``; it is treated as a batch of one.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, NumericError

INIT_STD = 0.02
INIT_SCHEMES = ("xavier", "trunc_normal")
DENSE = ("patch_proj", "wq", "wk", "wv", "wo", "w1", "w2")


@dataclass(frozen=True)
class ModelConfig:
    image_h: int = 16
    image_w: int = 16
    channels: int = 1
    patch: int = 4
    embed_dim: int = 32
    layers: int = 2
    heads: int = 2
    mlp_dim: int = 64
    num_classes: int = 4
    pixel_mean: float = 0.5
    pixel_std: float = 0.25
    init: str = "xavier"

    def __post_init__(self):
        for name in ("image_h", "image_w", "channels", "patch", "embed_dim", "layers", "heads",
                     "mlp_dim", "num_classes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be a positive integer")
        if self.image_h % self.patch or self.image_w % self.patch:
            raise ConfigError(
                f"model.patch={self.patch} does not divide image size {self.image_h}x{self.image_w}"
            )
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"model.init must be one of {INIT_SCHEMES}")
        if not self.pixel_std > 0:
            raise ConfigError("model.pixel_std must be > 0")
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"model.embed_dim={self.embed_dim} is not divisible by model.heads={self.heads}"
            )

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_h // self.patch, self.image_w // self.patch

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


class Params(dict):
    """Ordered name -> Tensor mapping holding every trainable array."""

    def __init__(self, config: ModelConfig, tensors: Optional[dict] = None):
        super().__init__(tensors or {})
        self.config = config

    def tensors(self) -> list[Tensor]:
        return list(self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def count(self) -> int:
        return int(sum(t.data.size for t in self.values()))

    def copy(self) -> "Params":
        return Params(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.items()},
        )


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Name and shape of every parameter, in canonical order."""
    d, m = config.embed_dim, config.mlp_dim
    shapes: dict[str, tuple] = {
        "patch_proj": (d, config.patch_dim),
        "cls_token": (1, d),
        "pos_embed": (config.num_patches + 1, d),
    }
    for l in range(config.layers):
        p = f"block{l}."
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
            p + "w1": (d, m), p + "b1": (m,),
            p + "w2": (m, d), p + "b2": (d,),
        })
    shapes.update({
        "norm_g": (d,), "norm_b": (d,),
        "head_w": (config.num_classes, d), "head_b": (config.num_classes,),
    })
    return shapes


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            data = np.ones(shape)
        elif leaf == "cls_token" or leaf.startswith("b") or leaf.endswith("_b"):
            data = np.zeros(shape)
        elif config.init == "xavier" and leaf in DENSE:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        else:
            data = _trunc_normal(rng, shape, INIT_STD)
        tensors[name] = Tensor(data, requires_grad=True, dtype=dtype, name=name)
    return Params(config, tensors)


# ------------------------------------------------------------------ patches
def standardize(images: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Pixel standardization applied before patchifying."""
    images = np.asarray(images, dtype=np.float32)
    return (images - np.float32(config.pixel_mean)) / np.float32(config.pixel_std)


def image_patches(images: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Standardized patches, the encoder's input for raw ``[0, 1]`` images."""
    return patchify(standardize(images, config), config)


def patchify(image: np.ndarray, config: ModelConfig) -> np.ndarray:
    """``H x W x C`` (or batched ``B x H x W x C``) -> ``N x (P*P*C)``.

    Patches are ordered row-major over the grid and each patch is flattened
    row-major over (row, column, channel).
    """
    image = np.asarray(image)
    expect = (config.image_h, config.image_w, config.channels)
    if image.ndim == 2 and config.channels == 1:
        image = image[..., None]
    if image.shape[-3:] != expect:
        raise DimensionError(f"patchify: image shape {image.shape} does not match {expect}")
    lead = image.shape[:-3]
    p = config.patch
    gh, gw = config.grid
    x = image.reshape(*lead, gh, p, gw, p, config.channels)
    nl = len(lead)
    x = np.moveaxis(x, nl + 2, nl + 1)
    return x.reshape(*lead, gh * gw, p * p * config.channels)


def unpatchify(patches: np.ndarray, config: ModelConfig) -> np.ndarray:
    patches = np.asarray(patches)
    if patches.shape[-2:] != (config.num_patches, config.patch_dim):
        raise DimensionError(
            f"unpatchify: got {patches.shape}, expected (..., {config.num_patches}, {config.patch_dim})"
        )
    lead = patches.shape[:-2]
    p = config.patch
    gh, gw = config.grid
    nl = len(lead)
    x = patches.reshape(*lead, gh, gw, p, p, config.channels)
    x = np.moveaxis(x, nl + 2, nl + 1)
    return x.reshape(*lead, config.image_h, config.image_w, config.channels)


# ---------------------------------------------------------------- embedding
def embed(patches, params: Params, kept: Optional[np.ndarray] = None) -> Tensor:
    """Class token + projected patches + positional embedding.

    ``kept`` lists, per image, the original patch index of each row in
    ``patches``; positional rows are gathered at those indices (the class row
    is always row 0).  Without it the patches are assumed complete and in
    order.
    """
    patches = ad.as_tensor(patches, like=params["patch_proj"])
    single = patches.ndim == 2
    if single:
        patches = ad.reshape(patches, (1,) + patches.shape)
    b, n, pd = patches.shape
    proj = params["patch_proj"]
    if pd != proj.shape[1]:
        raise DimensionError(f"embed: patch width {pd} does not match projection {proj.shape}")
    tokens = ad.matmul(patches, ad.transpose(proj))
    cls = ad.add(np.zeros((b, 1, proj.shape[0]), dtype=proj.dtype), params["cls_token"])
    x = ad.concat_rows([cls, tokens], axis=1)
    if kept is None:
        if n + 1 != params["pos_embed"].shape[0]:
            raise DimensionError(
                f"embed: {n} patches but positional table has {params['pos_embed'].shape[0]} rows"
            )
        x = ad.add(x, params["pos_embed"])
    else:
        kept = np.asarray(kept, dtype=np.intp).reshape(b, n)
        rows = np.concatenate([np.zeros((b, 1), dtype=np.intp), kept + 1], axis=1)
        x = ad.add(x, ad.gather_rows(params["pos_embed"], rows))
    if single:
        x = ad.reshape(x, x.shape[1:])
    return x


# ------------------------------------------------------------------ encoder
@dataclass
class ForwardTrace:
    """Everything one encoder pass exposes besides the logits.

    ``attn`` has shape ``(B, L, K, S, S)`` (``None`` unless collected);
    ``cls_by_layer[l]`` is the ``(B, D)`` class-token tensor after block l.
    """

    attn: Optional[np.ndarray]
    cls_by_layer: list = field(default_factory=list)
    logits: Optional[Tensor] = None

    def image(self, i: int) -> "ForwardTrace":
        """Per-image view with the batch axis removed (arrays, not tensors)."""
        return ForwardTrace(
            attn=None if self.attn is None else self.attn[i],
            cls_by_layer=[Tensor(t.data[i:i + 1]) for t in self.cls_by_layer],
            logits=None if self.logits is None else Tensor(self.logits.data[i:i + 1]),
        )

    @property
    def seq_len(self) -> int:
        return self.attn.shape[-1]


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def _attention(h: Tensor, params: Params, prefix: str, heads: int):
    bsz, s, d = h.shape
    dh = d // heads

    def split(t):
        return ad.transpose(ad.reshape(t, (bsz, s, heads, dh)), (0, 2, 1, 3))

    q = split(_linear(h, params[prefix + "wq"], params[prefix + "bq"]))
    k = split(_linear(h, params[prefix + "wk"], params[prefix + "bk"]))
    v = split(_linear(h, params[prefix + "wv"], params[prefix + "bv"]))
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dh))
    weights = ad.softmax_rows(scores)
    ctx = ad.matmul(weights, v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (bsz, s, d))
    return _linear(ctx, params[prefix + "wo"], params[prefix + "bo"]), weights.data


def encode(x0: Tensor, params: Params, collect_trace: bool = False) -> tuple[Tensor, ForwardTrace]:
    """Run every transformer block and the classification head.

    Returns ``(logits, trace)``; logits are ``(B, num_classes)``.  The trace
    always carries the per-layer class tokens and, when ``collect_trace`` is
    set, the attention maps of every layer and head.
    """
    cfg = params.config
    if x0.ndim == 2:
        x0 = ad.reshape(x0, (1,) + x0.shape)
    if x0.shape[1] < 2:
        raise DimensionError(f"encode needs a class token and at least one patch, got S={x0.shape[1]}")
    x = x0
    maps = []
    cls_by_layer = []
    for l in range(cfg.layers):
        p = f"block{l}."
        h = ad.layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        a, w = _attention(h, params, p, cfg.heads)
        x = ad.add(x, a)
        h = ad.layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        h = _linear(ad.gelu(_linear(h, params[p + "w1"], params[p + "b1"])), params[p + "w2"], params[p + "b2"])
        x = ad.add(x, h)
        if collect_trace:
            maps.append(w)
        cls_by_layer.append(x[:, 0, :])
    final = ad.layer_norm(x[:, 0, :], params["norm_g"], params["norm_b"])
    logits = _linear(final, ad.transpose(params["head_w"]), params["head_b"])
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("encode: non-finite activations")
    attn = np.stack(maps, axis=1) if collect_trace else None
    return logits, ForwardTrace(attn=attn, cls_by_layer=cls_by_layer, logits=logits)


def forward_images(images: np.ndarray, params: Params, collect_trace: bool = False):
    """Standardize, patchify, embed and encode a batch of ``B x H x W x C`` images."""
    patches = image_patches(images, params.config)
    return encode(embed(patches, params), params, collect_trace)


def forward_kept(patches: np.ndarray, kept: Sequence, params: Params, collect_trace: bool = False):
    """Encode only the kept patches of each image (second, masked pass)."""
    kept = np.asarray(kept, dtype=np.intp)
    sub = np.take_along_axis(np.asarray(patches), kept[..., None], axis=1)
    return encode(embed(sub, params, kept=kept), params, collect_trace)
