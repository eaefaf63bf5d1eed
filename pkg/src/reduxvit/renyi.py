"""Matrix-based Renyi alpha-entropy, mutual information and the IB loss.

Entropies are computed from the eigenvalues of a trace-normalized Gaussian
Gram matrix, so no density estimate is needed.  The whole path runs in
float64; gradients reach the features through the kernel and through the
spectral function ``sum(lambda ** alpha)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, NumericError

EIG_FLOOR = 1e-12
BANDWIDTH_POLICIES = ("fixed", "mean", "median")


class BandwidthFallbackWarning(RuntimeWarning):
    """All samples coincide, so a distance-based bandwidth would be zero."""


@dataclass(frozen=True)
class IbConfig:
    alpha: float = 1.01
    beta: float = 0.005
    bandwidth: str = "mean"
    sigma: float = 1.0
    bandwidth_grad: bool = True

    def __post_init__(self):
        if not self.alpha > 0 or self.alpha == 1:
            raise ConfigError(f"ib.alpha must be > 0 and != 1, got {self.alpha}")
        if self.beta < 0:
            raise ConfigError(f"ib.beta must be >= 0, got {self.beta}")
        if self.bandwidth not in BANDWIDTH_POLICIES:
            raise ConfigError(f"ib.bandwidth must be one of {BANDWIDTH_POLICIES}")
        if self.bandwidth == "fixed" and not self.sigma > 0:
            raise ConfigError("ib.sigma must be > 0 with a fixed bandwidth")


@dataclass
class EntropyEstimate:
    gram: np.ndarray
    eigenvalues: np.ndarray
    value: float


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def resolve_bandwidth(features: np.ndarray, config: IbConfig) -> tuple[float, bool]:
    """Kernel width for a batch; returns ``(sigma, fell_back)``."""
    if config.bandwidth == "fixed":
        return float(config.sigma), False
    d = pairwise_distances(features)
    iu = np.triu_indices(d.shape[0], k=1)
    pair = d[iu]
    sigma = float(pair.mean() if config.bandwidth == "mean" else np.median(pair))
    if not sigma > 0:
        warnings.warn("identical samples: kernel bandwidth falls back to 1.0",
                      BandwidthFallbackWarning, stacklevel=3)
        return 1.0, True
    return sigma, False


def _sigma_tensor(sq: Tensor, config: IbConfig) -> Tensor:
    """Batch bandwidth as a differentiable function of the squared distances."""
    n = sq.shape[0]
    iu = np.triu_indices(n, k=1)
    dist = ad.power(ad.index(sq, iu), 0.5)
    if config.bandwidth == "mean":
        return ad.mean(dist)
    order = np.argsort(dist.data, kind="stable")
    m = order.size
    mid = order[[(m - 1) // 2, m // 2]]
    return ad.mean(ad.gather_rows(dist, mid))


def gram_gaussian(features, config: IbConfig = IbConfig(), sigma: float | None = None) -> Tensor:
    """Gaussian-kernel Gram matrix ``exp(-|t_m - t_n|^2 / (2 sigma^2))``.

    ``sigma`` is resolved from the batch by the configured policy unless
    given.  An explicit or fixed sigma is a constant; a batch-derived one
    carries gradient when ``config.bandwidth_grad`` is set.
    """
    features = ad.as_tensor(features)
    if features.ndim != 2 or features.shape[0] < 2:
        raise DimensionError(f"gram_gaussian needs an N x D matrix with N >= 2, got {features.shape}")
    if not np.all(np.isfinite(features.data)):
        raise NumericError("gram_gaussian: non-finite features")
    x = ad.cast(features, np.float64)
    n, d = x.shape
    diff = ad.sub(ad.reshape(x, (n, 1, d)), ad.reshape(x, (1, n, d)))
    sq = ad.sum(ad.mul(diff, diff), axis=-1)
    if sigma is None:
        sigma, fell_back = resolve_bandwidth(x.data, config)
        if config.bandwidth != "fixed" and config.bandwidth_grad and not fell_back:
            s = _sigma_tensor(sq, config)
            return ad.exp(ad.div(sq, ad.scale(ad.mul(s, s), -2.0)))
    return ad.exp(ad.scale(sq, -1.0 / (2.0 * sigma * sigma)))


def label_gram(labels) -> np.ndarray:
    """Delta kernel on class labels: 1 where two samples share a label."""
    labels = np.asarray(labels).reshape(-1)
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def _normalize(gram: Tensor) -> Tensor:
    return ad.div(gram, ad.trace(gram))


def _check_gram(gram: Tensor, what: str) -> Tensor:
    gram = ad.as_tensor(gram)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise DimensionError(f"{what}: expected a square Gram matrix, got {gram.shape}")
    if not np.all(np.isfinite(gram.data)):
        raise NumericError(f"{what}: non-finite Gram matrix")
    if gram.dtype != np.float64:
        gram = ad.cast(gram, np.float64)
    return gram


def _spectral_entropy(a: Tensor, alpha: float) -> tuple[Tensor, np.ndarray]:
    lam, _ = ad.sym_eig(a)
    keep = np.flatnonzero(lam.data >= EIG_FLOOR)
    s = ad.sum(ad.power(ad.gather_rows(lam, keep), alpha))
    h = ad.scale(ad.log(s), 1.0 / ((1.0 - alpha) * math.log(2.0)))
    return h, np.clip(lam.data, 0.0, None)


def renyi_entropy(gram, alpha: float = 1.01) -> Tensor:
    """Renyi alpha-entropy (bits) of the trace-normalized Gram matrix."""
    gram = _check_gram(gram, "renyi_entropy")
    h, _ = _spectral_entropy(_normalize(gram), alpha)
    return h


def entropy_estimate(gram, alpha: float = 1.01) -> EntropyEstimate:
    gram = _check_gram(gram, "entropy_estimate")
    a = _normalize(gram)
    h, lam = _spectral_entropy(a, alpha)
    return EntropyEstimate(gram=a.data, eigenvalues=lam, value=float(h.data))


def mutual_information(gram_a, gram_b, alpha: float = 1.01) -> Tensor:
    """``H(A) + H(B) - H(A o B / tr(A o B))`` on normalized Gram matrices."""
    gram_a = _check_gram(gram_a, "mutual_information")
    gram_b = _check_gram(gram_b, "mutual_information")
    if gram_a.shape != gram_b.shape:
        raise DimensionError(
            f"mutual_information: Gram shapes differ, {gram_a.shape} vs {gram_b.shape}"
        )
    a = _normalize(gram_a)
    b = _normalize(gram_b)
    ha, _ = _spectral_entropy(a, alpha)
    hb, _ = _spectral_entropy(b, alpha)
    hab, _ = _spectral_entropy(_normalize(ad.mul(a, b)), alpha)
    return ad.sub(ad.add(ha, hb), hab)


def feature_entropy(features, config: IbConfig = IbConfig()) -> Tensor:
    return renyi_entropy(gram_gaussian(features, config), config.alpha)


def ib_loss(logits: Tensor, labels, class_tokens, config: IbConfig = IbConfig()) -> Tensor:
    """Cross-entropy plus ``beta`` times the entropy of the class tokens."""
    loss, _, _ = ib_terms(logits, labels, class_tokens, config)
    return loss


def ib_terms(logits: Tensor, labels, class_tokens, config: IbConfig = IbConfig()):
    """``(loss, cross_entropy, entropy)``; entropy is ``None`` when beta is 0."""
    ce = ad.cross_entropy_from_logits(logits, labels)
    if config.beta == 0:
        return ce, ce, None
    class_tokens = ad.as_tensor(class_tokens)
    if class_tokens.shape[0] < 2:
        raise ConfigError(
            "the IB entropy term needs a batch of at least 2; raise batch_size or set beta=0"
        )
    h = feature_entropy(class_tokens, config)
    reg = ad.cast(ad.scale(h, config.beta), ce.dtype)
    return ad.add(ce, reg), ce, h
