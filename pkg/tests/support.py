"""Random certified operators for property tests.

Two families, both with solution x* = 0:

* normal: orthogonally conjugated blocks ``alpha_i * rotation(theta_i)`` with
  ``alpha_i <= L`` and ``cos(theta_i) >= -rho * alpha_i`` (some blocks tight);
* non-normal: ``M = W^{-1}`` with ``W = P + K - t I`` (``P`` PSD, ``K`` skew),
  which is ``t``-comonotone since ``sym(M^{-1}) = P - t I``.
"""

import math

import numpy as np
from scipy.optimize import brentq
from scipy.stats import ortho_group

from comonotone_vi.operators import LinearOperator, certify_comonotone, lipschitz_constant, rotation_matrix


def normal_operator(rng, dim, rho, L, tight=False):
    blocks = []
    for _ in range(dim // 2):
        alpha = L if tight else rng.uniform(0.2, 1.0) * L
        cmin = max(-1.0, -rho * alpha)
        theta_max = math.acos(cmin)
        theta = theta_max if tight or rng.random() < 0.3 else rng.uniform(0, theta_max)
        blocks.append(alpha * rotation_matrix(theta))
    if dim % 2:
        blocks.append(np.array([[rng.uniform(0, L)]]))
    m = np.zeros((dim, dim))
    i = 0
    for b in blocks:
        k = b.shape[0]
        m[i : i + k, i : i + k] = b
        i += k
    q = ortho_group.rvs(dim, random_state=rng) if dim > 1 else np.eye(1)
    return LinearOperator(q @ m @ q.T, 1.0, "random-normal")


def nonnormal_operator(rng, dim, rho, L, tight=False):
    """Non-normal operator with tight constant at most ``rho`` and norm at most ``L``."""
    a = rng.standard_normal((dim, dim))
    p = a @ a.T / dim
    p -= np.linalg.eigvalsh(p)[0] * np.eye(dim)  # singular PSD part so that t is the tight constant
    k = rng.standard_normal((dim, dim))
    k = (k - k.T) * rng.uniform(0.5, 2.0)
    # t * ||M|| is scale invariant; after scaling ||M|| to L*shrink the tight constant is target/(L*shrink)
    shrink = 1.0 if tight else rng.uniform(0.5, 1.0)
    target = rho * L * shrink * (1.0 if tight else rng.uniform(0.3, 1.0))

    def product(t):
        w = p + k - t * np.eye(dim)
        return t * np.linalg.norm(np.linalg.inv(w), 2) - target

    if target == 0:
        t = 0.0
    else:
        hi = 1e-3
        while product(hi) < 0:
            hi *= 2
        t = brentq(product, 0.0, hi, xtol=1e-14)
    m = np.linalg.inv(p + k - t * np.eye(dim))
    m *= L * shrink / np.linalg.norm(m, 2)
    return LinearOperator(m, 1.0, "random-nonnormal")


def certified_operator(rng, rho, L, dim=None, tight=None):
    dim = dim or int(rng.integers(2, 7))
    tight = bool(rng.random() < 0.2) if tight is None else tight
    make = normal_operator if rng.random() < 0.5 else nonnormal_operator
    op = make(rng, dim, rho, L, tight)
    ok, cert = certify_comonotone(op, rho, tol=1e-9)
    assert ok, f"generated operator not {rho}-comonotone (tight rho {cert.tight_rho})"
    assert lipschitz_constant(op) <= L * (1 + 1e-12)
    return op


def random_unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)
