"""Matrix-based Renyi entropy and mutual information on Gram matrices.

Run:  python demos/renyi_entropy.py
"""
import math

import numpy as np

from reduxvit import IbConfig, gram_gaussian, label_gram, mutual_information, renyi_entropy

n = 16
# the two extremes: identical samples carry 0 bits, orthogonal ones log2(n)
print(f"H(ones)  = {float(renyi_entropy(np.ones((n, n))).data):.6f}")
print(f"H(I)     = {float(renyi_entropy(np.eye(n)).data):.6f}   log2(n) = {math.log2(n):.6f}")

rng = np.random.default_rng(1)
labels = np.repeat(np.arange(4), 4)
informative = np.eye(4)[labels] * 3 + 0.3 * rng.standard_normal((n, 4))
noise = rng.standard_normal((n, 4))

ky = label_gram(labels)
for name, feats in [("informative", informative), ("noise", noise)]:
    k = gram_gaussian(feats)
    print(f"{name:12s} H(T) = {float(renyi_entropy(k).data):.3f}  "
          f"I(T;Y) = {float(mutual_information(k, ky).data):.3f}")

# alpha close to one approaches the Shannon entropy of the normalized spectrum
k = gram_gaussian(noise).data
for alpha in (1.001, 1.01, 1.5, 2.0, 4.0):
    print(f"alpha={alpha:<6} H = {float(renyi_entropy(k, alpha).data):.4f}")

# bandwidth policies
for policy in ("mean", "median"):
    k = gram_gaussian(noise, IbConfig(bandwidth=policy))
    print(policy, "bandwidth: H =", round(float(renyi_entropy(k).data), 4))
