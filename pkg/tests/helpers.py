"""Shared oracles for the test suite (finite differences, brute-force k-means)."""
import itertools

import numpy as np

from sfuda.model import init_params
from sfuda.mvcl import LossWeights, pair_attention
from sfuda.objective import AdaptBatch, LossSpec, fused_embeddings


def random_instance(seed, multiplicative=False):
    """A small random model plus a full adaptation batch exercising all three loss terms."""
    rng = np.random.default_rng(seed)
    d_in, d_h, d_f, n = rng.integers(2, 5), rng.integers(3, 6), rng.integers(2, 4), rng.integers(2, 4)
    params = init_params(int(d_in), int(d_h), int(d_f), int(n), seed)
    m, V = int(rng.integers(3, 6)), int(rng.integers(1, 3))
    views_a = [rng.normal(size=(m, d_in)) for _ in range(V)]
    views_b = [rng.normal(size=(m, d_in)) for _ in range(V)]
    weights = rng.dirichlet(np.ones(V))
    lam = rng.dirichlet(np.ones(3))
    tau = float(rng.uniform(0.2, 1.0))
    z_a, _ = fused_embeddings(params, views_a, weights)
    z_b, _ = fused_embeddings(params, views_b, weights)
    attention = pair_attention(np.vstack([z_a, z_b]), tau)
    centroids = z_a[rng.choice(m, size=2, replace=False)] + rng.normal(scale=0.3, size=(2, z_a.shape[1]))
    k_ce = int(rng.integers(1, 4))
    batch = AdaptBatch(views_a, views_b, weights, centroids, attention,
                       rng.normal(size=(k_ce, d_in)), rng.integers(0, n, size=k_ce))
    spec = LossSpec(LossWeights(*lam), tau, multiplicative)
    return params, batch, spec


def fd_max_relative_error(params, batch, spec, loss_fn, h=1e-5):
    """Largest per-tensor ||analytic - central FD|| / max(||analytic||, ||FD||) over all parameters."""
    _, grads = loss_fn(params, batch, spec)
    worst = 0.0
    for name, arr in params.arrays().items():
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = loss_fn(params, batch, spec)
            arr[idx] = orig - h
            down, _ = loss_fn(params, batch, spec)
            arr[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
        denom = max(np.linalg.norm(grads[name]), np.linalg.norm(numeric), 1e-8)
        worst = max(worst, np.linalg.norm(grads[name] - numeric) / denom)
    return worst


def brute_force_kmeans_objective(points, k):
    """Minimum within-cluster sum of squares over every assignment using all k clusters."""
    m = len(points)
    best = np.inf
    for assign in itertools.product(range(k), repeat=m):
        a = np.array(assign)
        if len(set(assign)) < k:
            continue
        cost = sum(((points[a == c] - points[a == c].mean(axis=0)) ** 2).sum() for c in range(k))
        best = min(best, cost)
    return best
