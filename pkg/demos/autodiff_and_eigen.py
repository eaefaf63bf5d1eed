"""Tour of the tape: a few ops, one backward pass, and the eigen path.

Run:  python demos/autodiff_and_eigen.py
"""
import numpy as np

from reduxvit import autodiff as ad
from reduxvit.autodiff import Tensor

rng = np.random.default_rng(0)

# A tiny two-layer network written directly with tape ops.
x = Tensor(rng.standard_normal((5, 3)))
w1 = Tensor(rng.standard_normal((3, 8)) * 0.5, requires_grad=True)
w2 = Tensor(rng.standard_normal((8, 4)) * 0.5, requires_grad=True)
labels = np.array([0, 1, 2, 3, 0])

hidden = ad.gelu(ad.matmul(x, w1))
loss = ad.cross_entropy_from_logits(ad.matmul(hidden, w2), labels)
loss.backward()
print("loss          ", float(loss.data))
print("|dL/dw1|      ", float(np.linalg.norm(w1.grad)))

# Check one entry against a central difference.
eps = 1e-3
def value():
    h = ad.gelu(ad.matmul(x, Tensor(w1.data)))
    return float(ad.cross_entropy_from_logits(ad.matmul(h, Tensor(w2.data)), labels).data)
w1.data[1, 2] += eps; hi = value()
w1.data[1, 2] -= 2 * eps; lo = value()
w1.data[1, 2] += eps
print("analytic      ", w1.grad[1, 2], " numeric", (hi - lo) / (2 * eps))

# Symmetric eigendecomposition (cyclic Jacobi) vs numpy.
m = rng.standard_normal((6, 6))
a = m @ m.T
w, v = ad.jacobi_eigh(a)
print("eigenvalues   ", np.round(w, 4))
print("numpy eigh    ", np.round(np.linalg.eigh(a)[0], 4))
print("reconstruction", float(np.abs(v @ np.diag(w) @ v.T - a).max()))

# Gradient of the sum of squared eigenvalues is 2A (= d tr(A^2)/dA).
at = Tensor(a, requires_grad=True, dtype=np.float64)
lam, _ = ad.sym_eig(at)
ad.sum(ad.power(lam, 2.0)).backward()
print("spectral grad ", float(np.abs(at.grad - 2 * a).max()), "(max deviation from 2A)")
