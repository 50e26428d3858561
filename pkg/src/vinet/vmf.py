"""von Mises-Fisher sampling on the unit sphere (Wood, 1994)."""

import numpy as np


def _sample_weight(kappa, dim, rng):
    # rejection sampler for w = <x, mu>
    d1 = dim - 1.0
    b = d1 / (np.sqrt(4.0 * kappa**2 + d1**2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d1 * np.log(1.0 - x0**2)
    while True:
        z = rng.beta(d1 / 2.0, d1 / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform()
        if kappa * w + d1 * np.log(1.0 - x0 * w) - c >= np.log(u):
            return w


def _orthonormal_complement(mu):
    # rows span the plane orthogonal to mu
    _, _, vt = np.linalg.svd(mu[None, :])
    return vt[1:]


def sample_vmf(mu, kappa, size, rng=None):
    """Draw ``size`` unit vectors from vMF(mu, kappa); returns (size, dim)."""
    rng = np.random.default_rng(rng)
    mu = np.asarray(mu, dtype=float)
    mu = mu / np.linalg.norm(mu)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    dim = mu.size
    basis = _orthonormal_complement(mu)
    out = np.empty((size, dim))
    for k in range(size):
        w = _sample_weight(kappa, dim, rng)
        v = rng.standard_normal(dim - 1) @ basis
        v /= np.linalg.norm(v)
        out[k] = w * mu + np.sqrt(max(0.0, 1.0 - w * w)) * v
    return out


def mean_resultant_length(kappa):
    """E[<x, mu>] on S^2: coth(kappa) - 1/kappa."""
    return 1.0 / np.tanh(kappa) - 1.0 / kappa
