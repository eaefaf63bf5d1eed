"""Matrix-based Renyi entropy, mutual information and the IB loss.

The oracle throughout is numpy.linalg.eigh plus the entropy formula written
out directly, independent of the package's Jacobi solver and tape.
"""

import math
import warnings

import numpy as np
import pytest

from reduxvit import autodiff as ad
from reduxvit.autodiff import Tensor
from reduxvit.errors import ConfigError, DimensionError
from reduxvit.renyi import (BandwidthFallbackWarning, IbConfig, entropy_estimate, gram_gaussian,
                            ib_loss, ib_terms, label_gram, mutual_information, renyi_entropy,
                            resolve_bandwidth)

from conftest import numeric_grad, rel_error


def oracle_entropy(k, alpha):
    a = np.asarray(k, dtype=np.float64) / np.trace(k)
    lam = np.linalg.eigh(a)[0]
    lam = lam[lam >= 1e-12]
    return math.log2(np.sum(lam ** alpha)) / (1 - alpha)


def oracle_mi(ka, kb, alpha):
    a = ka / np.trace(ka)
    b = kb / np.trace(kb)
    return oracle_entropy(a, alpha) + oracle_entropy(b, alpha) - oracle_entropy(a * b, alpha)


def random_psd(rng, n):
    m = rng.standard_normal((n, rng.integers(1, n + 2)))
    return m @ m.T + 1e-3 * np.eye(n)


def h(k, alpha=1.01):
    return float(renyi_entropy(Tensor(k, dtype=np.float64), alpha).data)


# --------------------------------------------------------------- kernel
def test_gram_unit_diagonal():
    x = np.random.default_rng(0).standard_normal((7, 4))
    k = gram_gaussian(x).data
    np.testing.assert_array_equal(np.diag(k), 1.0)
    np.testing.assert_array_equal(k, k.T)


def test_gram_plugin_value():
    sigma = 0.7
    x = np.array([[0.0, 0.0], [sigma * math.sqrt(2), 0.0]])
    k = gram_gaussian(x, IbConfig(bandwidth="fixed", sigma=sigma)).data
    assert k[0, 1] == pytest.approx(math.exp(-1), abs=1e-12)


@pytest.mark.parametrize("policy", ["fixed", "mean", "median"])
def test_gram_double_loop_oracle(policy):
    x = np.random.default_rng(1).standard_normal((5, 3))
    cfg = IbConfig(bandwidth=policy, sigma=1.3)
    d = [[math.dist(x[i], x[j]) for j in range(5)] for i in range(5)]
    pairs = [d[i][j] for i in range(5) for j in range(i + 1, 5)]
    sigma = {"fixed": 1.3, "mean": sum(pairs) / len(pairs), "median": float(np.median(pairs))}[policy]
    oracle = [[math.exp(-d[i][j] ** 2 / (2 * sigma ** 2)) for j in range(5)] for i in range(5)]
    assert np.max(np.abs(gram_gaussian(x, cfg).data - np.array(oracle))) < 1e-6


def test_bandwidth_fallback_warns():
    with pytest.warns(BandwidthFallbackWarning):
        sigma, fell_back = resolve_bandwidth(np.ones((4, 3)), IbConfig())
    assert sigma == 1.0 and fell_back
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthFallbackWarning)
        np.testing.assert_array_equal(gram_gaussian(np.ones((4, 3))).data, 1.0)


def test_gram_needs_two_samples():
    with pytest.raises(DimensionError):
        gram_gaussian(np.ones((1, 3)))


@pytest.mark.parametrize("kwargs", [{"alpha": 1.0}, {"alpha": 0}, {"beta": -1},
                                    {"bandwidth": "max"}, {"bandwidth": "fixed", "sigma": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        IbConfig(**kwargs)


# ------------------------------------------------------------- entropy
@pytest.mark.parametrize("n", [2, 4, 8, 64])
@pytest.mark.parametrize("alpha", [1.001, 1.01, 2.0])
def test_entropy_bounds_exact(n, alpha):
    assert abs(h(np.ones((n, n)), alpha)) < 1e-9
    assert abs(h(np.eye(n), alpha) - math.log2(n)) < 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_entropy_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    k = random_psd(rng, int(rng.integers(2, 17)))
    for alpha in (1.01, 2.0, 0.5):
        assert abs(h(k, alpha) - oracle_entropy(k, alpha)) < 1e-6


def test_entropy_estimate_invariants():
    k = gram_gaussian(np.random.default_rng(3).standard_normal((9, 4))).data
    est = entropy_estimate(k)
    assert np.trace(est.gram) == pytest.approx(1.0, abs=1e-6)
    assert np.all(est.eigenvalues >= 0)
    assert 0 <= est.value <= math.log2(9)


def test_entropy_permutation_invariant():
    rng = np.random.default_rng(4)
    k = random_psd(rng, 8)
    perm = rng.permutation(8)
    assert h(k[perm][:, perm]) == pytest.approx(h(k), abs=1e-10)


def test_entropy_non_increasing_in_alpha():
    rng = np.random.default_rng(5)
    for _ in range(10):
        k = gram_gaussian(rng.standard_normal((10, 3))).data
        values = [h(k, a) for a in (1.001, 1.01, 1.1, 2.0)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
        lam = np.clip(np.linalg.eigh(k / np.trace(k))[0], 1e-300, None)
        shannon = -np.sum(lam * np.log2(lam))
        assert abs(values[0] - shannon) < 0.01


def test_entropy_rejects_non_square():
    with pytest.raises(DimensionError):
        renyi_entropy(np.ones((2, 3)))


# ------------------------------------------------------------------ MI
def mi(a, b, alpha=1.01):
    return float(mutual_information(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64), alpha).data)


@pytest.mark.parametrize("seed", range(20))
def test_mi_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 17))
    a, b = random_psd(rng, n), random_psd(rng, n)
    assert abs(mi(a, b) - oracle_mi(a, b, 1.01)) < 1e-6


def test_self_information_direct_evaluation():
    """I(A;A) = 2 H(A) - H(A o A / tr): matches direct evaluation, bounded by H(A).

    I(A;A) equals H(A) exactly only when A o A has the spectrum of A (e.g.
    K = I or K = J); for a general Gaussian Gram matrix the Hadamard square
    is a narrower-kernel Gram matrix with larger entropy, so I(A;A) < H(A).
    """
    for seed in range(5):
        k = gram_gaussian(np.random.default_rng(seed).standard_normal((8, 3))).data
        a = k / np.trace(k)
        direct = 2 * oracle_entropy(a, 1.01) - oracle_entropy(a * a, 1.01)
        assert mi(k, k) == pytest.approx(direct, abs=1e-9)
        assert mi(k, k) <= h(k) + 1e-9
    for k in (np.eye(8), np.ones((8, 8))):
        assert mi(k, k) == pytest.approx(h(k), abs=1e-9)


def test_mi_with_spread_partner():
    rng = np.random.default_rng(7)
    a = random_psd(rng, 4)
    b = np.eye(4) / 4
    assert mi(a, b) == pytest.approx(oracle_mi(a, b, 1.01), abs=1e-9)


def test_mi_zero_for_redundant():
    j = np.ones((5, 5)) / 5
    assert abs(mi(j, j)) < 1e-9


def test_mi_shape_mismatch():
    with pytest.raises(DimensionError):
        mutual_information(np.eye(3), np.eye(4))


def test_label_gram():
    np.testing.assert_array_equal(label_gram([0, 1, 0]), [[1, 0, 1], [0, 1, 0], [1, 0, 1]])


# ------------------------------------------------------------- IB loss
def batch(seed, b=4, d=8, classes=3):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((b, classes)), rng.integers(0, classes, size=b),
            rng.standard_normal((b, d)))


def test_beta_zero_is_cross_entropy():
    logits, labels, tok = batch(0)
    lt = Tensor(logits, dtype=np.float64)
    loss = ib_loss(lt, labels, tok, IbConfig(beta=0.0))
    assert float(loss.data) == float(ad.cross_entropy_from_logits(lt, labels).data)


def test_identical_tokens_add_nothing():
    logits, labels, _ = batch(1)
    lt = Tensor(logits, dtype=np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthFallbackWarning)
        loss = ib_loss(lt, labels, np.ones((4, 8)), IbConfig(beta=0.5))
    assert float(loss.data) == pytest.approx(float(ad.cross_entropy_from_logits(lt, labels).data), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_ib_loss_composition(seed):
    logits, labels, tok = batch(seed)
    cfg = IbConfig(beta=0.3)
    z = logits - logits.max(axis=1, keepdims=True)
    ce = -np.mean(z[np.arange(4), labels] - np.log(np.exp(z).sum(axis=1)))
    d = np.sqrt(((tok[:, None] - tok[None]) ** 2).sum(-1))
    sigma = d[np.triu_indices(4, 1)].mean()
    k = np.exp(-d ** 2 / (2 * sigma ** 2))
    expected = ce + 0.3 * oracle_entropy(k, 1.01)
    got = float(ib_loss(Tensor(logits, dtype=np.float64), labels, tok, cfg).data)
    assert abs(got - expected) < 1e-6


def test_ib_needs_batch_of_two():
    with pytest.raises(ConfigError):
        ib_terms(Tensor(np.zeros((1, 2))), [0], np.zeros((1, 3)), IbConfig(beta=0.1))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("policy", ["fixed", "mean", "median"])
def test_ib_loss_grad(seed, policy):
    logits, labels, tok = batch(seed)
    cfg = IbConfig(beta=0.5, bandwidth=policy, sigma=2.0)
    lt = Tensor(logits, requires_grad=True, dtype=np.float64)
    tt = Tensor(tok, requires_grad=True, dtype=np.float64)
    ib_loss(lt, labels, tt, cfg).backward()

    def f():
        return float(ib_loss(Tensor(lt.data, dtype=np.float64), labels,
                             Tensor(tt.data, dtype=np.float64), cfg).data)

    assert rel_error(tt.grad, numeric_grad(f, tt.data)) < 1e-2
    assert rel_error(lt.grad, numeric_grad(f, lt.data)) < 1e-3


def test_frozen_bandwidth_grad_matches_fixed_sigma():
    """With bandwidth_grad off, the gradient is that of the loss at a constant sigma."""
    _, _, tok = batch(9)
    cfg = IbConfig(bandwidth="mean", bandwidth_grad=False)
    sigma, _ = resolve_bandwidth(tok, cfg)
    tt = Tensor(tok, requires_grad=True, dtype=np.float64)
    renyi_entropy(gram_gaussian(tt, cfg)).backward()
    fixed = IbConfig(bandwidth="fixed", sigma=sigma)
    f = lambda: float(renyi_entropy(gram_gaussian(Tensor(tt.data, dtype=np.float64), fixed)).data)
    assert rel_error(tt.grad, numeric_grad(f, tt.data)) < 1e-2


def test_entropy_float32_input_promoted():
    k = gram_gaussian(np.random.default_rng(2).standard_normal((6, 3)).astype(np.float32))
    assert k.dtype == np.float64
    assert renyi_entropy(k).dtype == np.float64
