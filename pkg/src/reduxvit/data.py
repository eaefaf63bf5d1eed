"""Synthetic fine-grained images with ground-truth patch roles, plus file I/O.

Each image holds one class glyph (foreground) on a noise background, and a
few identical copies of a cue motif that hints at the class group.  Classes
differ only through detail scaled by ``glyph_contrast``, so the task is
fine-grained by construction; the cue copies are informative but redundant
beyond the first one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    ImageFormatError,
    TruncatedFileError,
    VersionMismatchError,
)

FOREGROUND, CUE, BACKGROUND = 0, 1, 2
ROLE_NAMES = ("foreground", "cue", "background")

BACKGROUND_LEVEL = 0.3
GLYPH_LEVEL = 0.85
CUE_LEVEL = 0.6
DETAIL_SCALE = 0.3
TEST_EVERY = 5  # every 5th image of a class goes to the test split


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    images_per_class: int = 40
    image_h: int = 16
    image_w: int = 16
    channels: int = 1
    patch: int = 4
    glyph_patches: int = 2
    glyph_contrast: float = 0.5
    cue_count: int = 3
    noise_std: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.images_per_class < 1:
            raise ConfigError("data.num_classes and data.images_per_class must be >= 1")
        if self.patch < 1 or self.image_h % self.patch or self.image_w % self.patch:
            raise ConfigError(
                f"data.patch={self.patch} does not divide image size {self.image_h}x{self.image_w}"
            )
        gh, gw = self.grid
        if not 1 <= self.glyph_patches <= min(gh, gw):
            raise ConfigError(f"data.glyph_patches={self.glyph_patches} does not fit the {gh}x{gw} grid")
        if self.cue_count < 0 or self.cue_count + self.glyph_patches**2 >= self.num_patches:
            raise ConfigError(
                f"data.cue_count={self.cue_count} plus {self.glyph_patches**2} glyph patches "
                f"must be fewer than {self.num_patches} patches"
            )
        if not self.glyph_contrast >= 0:
            raise ConfigError("data.glyph_contrast must be >= 0")
        if self.noise_std < 0:
            raise ConfigError("data.noise_std must be >= 0")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_h // self.patch, self.image_w // self.patch

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def role_counts(self) -> tuple[int, int, int]:
        fg = self.glyph_patches**2
        return fg, self.cue_count, self.num_patches - fg - self.cue_count


@dataclass
class Sample:
    image: np.ndarray
    label: int
    patch_roles: np.ndarray


@dataclass
class Dataset:
    spec: SynthSpec
    images: np.ndarray  # (M, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (M,)
    roles: np.ndarray  # (M, N) of FOREGROUND / CUE / BACKGROUND
    split: np.ndarray  # (M,) of "train" / "test"
    ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i) -> Sample:
        return Sample(self.images[i], int(self.labels[i]), self.roles[i])

    def subset(self, which: str) -> "Dataset":
        idx = np.flatnonzero(self.split == which)
        return Dataset(self.spec, self.images[idx], self.labels[idx], self.roles[idx],
                       self.split[idx], [self.ids[i] for i in idx])

    @property
    def train(self) -> "Dataset":
        return self.subset("train")

    @property
    def test(self) -> "Dataset":
        return self.subset("test")


def quantize(x: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so images survive a PGM round trip unchanged."""
    return (np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5) / 255.0).astype(np.float32)


def _class_bank(spec: SynthSpec):
    """Shared glyph, per-class detail patterns, and per-group cue details."""
    rng = np.random.default_rng([spec.seed, 0x5EED])
    g = spec.glyph_patches * spec.patch
    base = np.zeros((g, g))
    base[0, :] = base[-1, :] = base[:, 0] = base[:, -1] = 1.0
    base[g // 2 - 1:g // 2 + 1, g // 2 - 1:g // 2 + 1] = 1.0
    details = rng.choice([-1.0, 1.0], size=(spec.num_classes, g, g))
    groups = (spec.num_classes + 1) // 2
    p = spec.patch
    cue_base = np.zeros((p, p))
    cue_base[p // 2 - 1:p // 2 + 1, :] = 1.0
    cue_base[:, p // 2 - 1:p // 2 + 1] = 1.0
    cue_details = rng.choice([-1.0, 1.0], size=(groups, p, p))
    return base, details, cue_base, cue_details


def _render(spec: SynthSpec, label: int, index: int, bank):
    base, details, cue_base, cue_details = bank
    rng = np.random.default_rng([spec.seed, index])
    gh, gw = spec.grid
    p, gp = spec.patch, spec.glyph_patches
    img = BACKGROUND_LEVEL + 0.15 * rng.uniform(-1.0, 1.0, size=(spec.image_h, spec.image_w))
    roles = np.full((gh, gw), BACKGROUND, dtype=np.int8)

    r0 = int(rng.integers(0, gh - gp + 1))
    c0 = int(rng.integers(0, gw - gp + 1))
    roles[r0:r0 + gp, c0:c0 + gp] = FOREGROUND
    glyph = np.where(base > 0, GLYPH_LEVEL, 0.1) + DETAIL_SCALE * spec.glyph_contrast * details[label]
    img[r0 * p:(r0 + gp) * p, c0 * p:(c0 + gp) * p] = glyph

    free = np.flatnonzero(roles.reshape(-1) == BACKGROUND)
    cues = np.sort(rng.choice(free, size=spec.cue_count, replace=False)) if spec.cue_count else []
    motif = np.where(cue_base > 0, CUE_LEVEL, 0.1) + DETAIL_SCALE * spec.glyph_contrast * cue_details[label // 2]
    for k in cues:
        r, c = divmod(int(k), gw)
        roles[r, c] = CUE
        img[r * p:(r + 1) * p, c * p:(c + 1) * p] = motif

    img = img + spec.noise_std * rng.standard_normal(img.shape)
    img = quantize(img)[..., None]
    if spec.channels > 1:
        img = np.repeat(img, spec.channels, axis=-1)
    return img, roles.reshape(-1)


def generate(spec: SynthSpec) -> Dataset:
    """Build the full dataset; a pure function of ``spec``."""
    bank = _class_bank(spec)
    images, labels, roles, split, ids = [], [], [], [], []
    index = 0
    for j in range(spec.images_per_class):
        for label in range(spec.num_classes):
            img, r = _render(spec, label, index, bank)
            images.append(img)
            labels.append(label)
            roles.append(r)
            split.append("test" if j % TEST_EVERY == TEST_EVERY - 1 else "train")
            ids.append(f"img{index:05d}")
            index += 1
    return Dataset(
        spec=spec,
        images=np.stack(images).astype(np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        roles=np.stack(roles),
        split=np.asarray(split),
        ids=ids,
    )


# ------------------------------------------------------------- PGM / PPM
def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated image header")
    return buf[start:pos], pos


def read_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file as ``H x W x C`` floats in [0, 1]."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported image type {magic!r}; only P5/P6 are read")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"malformed header field {tok!r}") from None
    w, h, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}; only 255 is supported")
    if w < 1 or h < 1:
        raise ImageFormatError("image dimensions must be positive")
    pos += 1  # single whitespace byte after maxval
    c = 1 if magic == b"P5" else 3
    payload = buf[pos:pos + w * h * c]
    if len(payload) != w * h * c:
        raise ImageFormatError("pixel payload is shorter than the header declares")
    return (np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c) / 255.0).astype(np.float32)


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    h, w, c = image.shape
    if c not in (1, 3):
        raise ImageFormatError(f"cannot write {c}-channel image; use 1 (PGM) or 3 (PPM)")
    magic = b"P5" if c == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (w, h)
    Path(path).write_bytes(header + to_bytes(image).tobytes())


# ------------------------------------------------------------- manifest
def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write every image plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ext = "pgm" if dataset.spec.channels == 1 else "ppm"
    entries = []
    for i, image_id in enumerate(dataset.ids):
        rel = f"images/{image_id}.{ext}"
        write_image(out / rel, dataset.images[i])
        entries.append({
            "id": image_id,
            "file": rel,
            "label": int(dataset.labels[i]),
            "split": str(dataset.split[i]),
            "patch_roles": [ROLE_NAMES[r] for r in dataset.roles[i]],
        })
    manifest = {"format": "reduxvit-manifest", "version": 1, "spec": asdict(dataset.spec),
                "images": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> Dataset:
    """Load a dataset from a manifest file or the directory holding one."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    spec = SynthSpec(**manifest["spec"])
    root = path.parent
    entries = manifest["images"]
    index = {name: k for k, name in enumerate(ROLE_NAMES)}
    images = np.stack([read_image(root / e["file"]) for e in entries])
    return Dataset(
        spec=spec,
        images=images.astype(np.float32),
        labels=np.asarray([e["label"] for e in entries], dtype=np.int64),
        roles=np.asarray([[index[r] for r in e["patch_roles"]] for e in entries], dtype=np.int8),
        split=np.asarray([e["split"] for e in entries]),
        ids=[e["id"] for e in entries],
    )


# ------------------------------------------------------------- checkpoints
MAGIC = b"R2TK"
FORMAT_VERSION = 1


def encode_checkpoint(tensors) -> bytes:
    items = [(k, np.asarray(getattr(v, "data", v), dtype="<f4")) for k, v in tensors.items()]
    out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 4:
        raise TruncatedFileError("checkpoint shorter than its magic bytes")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedFileError(f"checkpoint truncated at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<HI", take(6))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    return tensors


def save_checkpoint(params, path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path, config=None):
    """Decode a checkpoint; with a ModelConfig, return validated ``Params``."""
    tensors = decode_checkpoint(Path(path).read_bytes())
    if config is None:
        return tensors
    from .autodiff import Tensor
    from .vit import Params, param_shapes

    shapes = param_shapes(config)
    if list(shapes) != list(tensors) or any(tensors[k].shape != s for k, s in shapes.items()):
        raise ConfigError("checkpoint tensors do not match the model configuration")
    return Params(config, {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in tensors.items()})
