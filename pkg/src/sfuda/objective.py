"""Composite adaptation objective and its analytic gradient.

    total = lambda_con * L_con + lambda_ce * L_ce + lambda_clu * L_clu

L_con is the attention-augmented contrastive loss over two independently
augmented draws of the batch, L_ce the cross-entropy on retained pseudo-labels
and L_clu the squared distance of each fused embedding to its nearest k-means
centroid.  Each term is averaged per sample.  View weights, centroids and the
pair attention matrix are inputs, held constant for differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, FrozenModel, InvalidInput
from .model import ModelParams, cross_entropy_and_grad, extract_features, feature_backward, zero_grads
from .mvcl import LossWeights, contrastive_loss, fuse, pair_attention


@dataclass
class LossSpec:
    weights: LossWeights = field(default_factory=LossWeights)
    tau: float = 0.5
    multiplicative: bool = False


@dataclass
class AdaptBatch:
    """Inputs for one optimisation step.

    ``views_a`` / ``views_b`` are V augmented copies (each m x d_in) of the
    same m samples; ``view_weights`` scale the per-view features inside the
    fused embedding.  ``ce_inputs``/``ce_labels`` carry the retained
    pseudo-labelled samples and may be empty.
    """

    views_a: list[np.ndarray] = field(default_factory=list)
    views_b: list[np.ndarray] = field(default_factory=list)
    view_weights: np.ndarray | None = None
    centroids: np.ndarray | None = None
    attention: np.ndarray | None = None
    ce_inputs: np.ndarray | None = None
    ce_labels: np.ndarray | None = None

    def size(self) -> int:
        n = len(self.views_a[0]) if self.views_a else 0
        if self.ce_labels is not None:
            n += len(self.ce_labels)
        return n


def fused_embeddings(params: ModelParams, views, weights):
    cache = [extract_features(params, x) for x in views]
    return fuse([f for _, f in cache], weights), cache


def _scatter_fused_grad(params, views, cache, weights, d_z, grads):
    d_f = params.W2.shape[1]
    for v, (x, (hidden, feats)) in enumerate(zip(views, cache)):
        block = d_z[:, v * d_f:(v + 1) * d_f] * weights[v]
        feature_backward(params, x, hidden, feats, block, grads)


def loss_and_grad(params: ModelParams, batch: AdaptBatch, spec: LossSpec, components=None):
    """Return ``(loss, grads)`` for the weighted composite objective.

    If ``components`` is a dict it receives the unweighted per-term values
    under ``l_con``, ``l_ce``, ``l_clu`` (NaN for a term without data).
    """
    if params.frozen:
        raise FrozenModel("cannot differentiate a frozen model for training")
    if batch.size() == 0:
        raise EmptyInput("empty batch")
    lam = spec.weights
    grads = zero_grads(params)
    parts = {"l_con": float("nan"), "l_ce": float("nan"), "l_clu": float("nan")}
    total = 0.0

    have_views = bool(batch.views_a)
    if have_views:
        V = len(batch.views_a)
        weights = np.full(V, 1.0 / V) if batch.view_weights is None else np.asarray(batch.view_weights)
        if len(weights) != V:
            raise InvalidInput("one view weight per view is required")
        m = len(batch.views_a[0])
        z_a, cache_a = fused_embeddings(params, batch.views_a, weights)
        d_z_a = np.zeros_like(z_a)

        if batch.views_b and (lam.con > 0 or components is not None):
            z_b, cache_b = fused_embeddings(params, batch.views_b, weights)
            z = np.vstack([z_a, z_b])
            attention = batch.attention
            if attention is None:
                attention = pair_attention(z, spec.tau)
            l_con, d_z = contrastive_loss(z, spec.tau, attention, spec.multiplicative, return_grad=True)
            parts["l_con"] = l_con / (2 * m)
            if lam.con > 0:
                total += lam.con * parts["l_con"]
                scale = lam.con / (2 * m)
                d_z_a += scale * d_z[:m]
                _scatter_fused_grad(params, batch.views_b, cache_b, weights, scale * d_z[m:], grads)

        if batch.centroids is not None and (lam.clu > 0 or components is not None):
            diff = z_a[:, None, :] - batch.centroids[None, :, :]
            d2 = (diff**2).sum(axis=2)
            nearest = np.argmin(d2, axis=1)
            parts["l_clu"] = float(d2[np.arange(m), nearest].sum() / m)
            if lam.clu > 0:
                total += lam.clu * parts["l_clu"]
                d_z_a += lam.clu * 2.0 * diff[np.arange(m), nearest] / m

        _scatter_fused_grad(params, batch.views_a, cache_a, weights, d_z_a, grads)

    if batch.ce_labels is not None and len(batch.ce_labels):
        if lam.ce > 0:
            parts["l_ce"] = cross_entropy_and_grad(params, batch.ce_inputs, batch.ce_labels, grads, scale=lam.ce)
            total += lam.ce * parts["l_ce"]
        elif components is not None:
            parts["l_ce"] = cross_entropy_and_grad(params, batch.ce_inputs, batch.ce_labels)

    if components is not None:
        components.update(parts)
    if not np.isfinite(total):
        raise InvalidInput("composite loss is not finite")
    return float(total), grads
