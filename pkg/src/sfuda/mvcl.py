"""Multi-view contrastive pseudo-labelling.

Augmented views of each sample are pushed through the feature extractor,
weighted by how much variance each view carries, concatenated into one fused
embedding per sample, clustered with k-means, and finally labelled by the
nearest class prototype under cosine similarity.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyInput, InvalidInput, NoPrototypes, ZeroNorm
from .model import ModelParams, extract_features
from .numeric import column_mean_variance, cosine_matrix, l2_normalize_rows, softmax_rows

# --------------------------------------------------------------------------
# augmentations


@dataclass(frozen=True)
class TransformSpec:
    """Vector-space augmentation.

    kind is one of ``identity``, ``jitter`` (uses ``sigma``), ``rotate``
    (``angle`` radians in coordinate ``plane``), ``scale`` (``factor``) or
    ``compose`` (``steps`` applied left to right).  A rotation with
    ``random=True`` draws a fresh angle uniformly from [-angle, angle] for
    every sample.
    """

    kind: str = "identity"
    sigma: float = 0.0
    angle: float = 0.0
    plane: tuple[int, int] = (0, 1)
    factor: float = 1.0
    steps: tuple["TransformSpec", ...] = ()
    random: bool = False

    def __post_init__(self):
        if self.kind not in ("identity", "jitter", "rotate", "scale", "compose"):
            raise InvalidInput(f"unknown transform kind {self.kind!r}")
        if self.sigma < 0:
            raise InvalidInput("jitter sigma must be >= 0")
        if self.factor <= 0:
            raise InvalidInput("scale factor must be > 0")
        if self.kind == "rotate" and self.plane[0] == self.plane[1]:
            raise InvalidInput("rotation plane indices must differ")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def jitter(cls, sigma):
        return cls("jitter", sigma=sigma)

    @classmethod
    def rotate(cls, angle, plane=(0, 1), random=False):
        return cls("rotate", angle=angle, plane=tuple(plane), random=random)

    @classmethod
    def scale(cls, factor):
        return cls("scale", factor=factor)

    @classmethod
    def compose(cls, *steps):
        return cls("compose", steps=tuple(steps))


WEAK_VIEW = TransformSpec.jitter(0.05)
STRONG_VIEW = TransformSpec.compose(
    TransformSpec.rotate(0.3, random=True), TransformSpec.scale(1.1), TransformSpec.jitter(0.1)
)


def default_views(n_views: int = 2) -> list[TransformSpec]:
    """Weak view first, then strong views."""
    if n_views < 1:
        raise InvalidInput("need at least one view")
    return [WEAK_VIEW] + [STRONG_VIEW] * (n_views - 1)


def apply_transform(x, spec: TransformSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply ``spec`` to one vector or to every row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[-1]
    if spec.kind == "identity":
        return x.copy()
    if spec.kind == "jitter":
        if spec.sigma == 0:
            return x.copy()
        return x + rng.normal(0.0, spec.sigma, size=x.shape)
    if spec.kind == "scale":
        return x * spec.factor
    if spec.kind == "rotate":
        i, j = spec.plane
        if not (0 <= i < dim and 0 <= j < dim):
            raise InvalidInput(f"rotation plane {spec.plane} out of range for dimension {dim}")
        angle = spec.angle
        if spec.random:
            angle = spec.angle * rng.uniform(-1.0, 1.0, size=x.shape[:-1])
        c, s = np.cos(angle), np.sin(angle)
        out = x.copy()
        out[..., i] = c * x[..., i] - s * x[..., j]
        out[..., j] = s * x[..., i] + c * x[..., j]
        return out
    for step in spec.steps:
        x = apply_transform(x, step, rng)
    return x


# --------------------------------------------------------------------------
# views, weights, fusion


@dataclass
class ViewBundle:
    view_features: list[np.ndarray]
    view_weights: np.ndarray
    fused: np.ndarray
    degenerate: bool = False
    view_inputs: list[np.ndarray] = field(default_factory=list, repr=False)


def augment_views(batch, specs: Sequence[TransformSpec], rng) -> list[np.ndarray]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or len(batch) == 0:
        raise EmptyInput("empty batch")
    return [apply_transform(batch, spec, rng) for spec in specs]


def extract_views(params: ModelParams, batch, specs: Sequence[TransformSpec], rng):
    """Feature matrix F(T_v(x_i)) for every view v; returns (features, view_inputs)."""
    if len(specs) < 1:
        raise InvalidInput("at least one view spec is required")
    inputs = augment_views(batch, specs, rng)
    return [extract_features(params, x)[1] for x in inputs], inputs


def view_weights(view_features: Sequence[np.ndarray]) -> tuple[np.ndarray, bool]:
    """Share of total mean-feature-variance carried by each view.

    Falls back to uniform weights (flagged degenerate) if no view has any
    variance.
    """
    if len(view_features) == 0:
        raise InvalidInput("no views")
    rows = {np.shape(v)[0] for v in view_features}
    if len(rows) != 1:
        raise InvalidInput(f"views have mismatched row counts {sorted(rows)}")
    variances = np.array([column_mean_variance(v)[1] for v in view_features])
    total = variances.sum()
    if total == 0:
        return np.full(len(variances), 1.0 / len(variances)), True
    return variances / total, False


def fuse(view_features: Sequence[np.ndarray], weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(view_features):
        raise InvalidInput("one weight per view is required")
    shapes = {np.shape(v) for v in view_features}
    if len(shapes) != 1:
        raise InvalidInput(f"view feature shapes differ: {sorted(shapes)}")
    return np.concatenate([w * np.asarray(v, dtype=np.float64) for w, v in zip(weights, view_features)], axis=1)


def build_view_bundle(params, batch, specs, rng) -> ViewBundle:
    feats, inputs = extract_views(params, batch, specs, rng)
    w, degenerate = view_weights(feats)
    return ViewBundle(feats, w, fuse(feats, w), degenerate, inputs)


# --------------------------------------------------------------------------
# k-means


@dataclass
class ClusterResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_trace: list[float] = field(default_factory=list)


def _sq_dists(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_plusplus(points: np.ndarray, k: int, rng) -> np.ndarray:
    m = len(points)
    centroids = [points[rng.integers(m)]]
    for _ in range(1, k):
        d2 = _sq_dists(points, np.array(centroids)).min(axis=1)
        total = d2.sum()
        if total == 0:
            idx = rng.integers(m)
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random(), side="right"))
            idx = min(idx, m - 1)
        centroids.append(points[idx])
    return np.array(centroids, dtype=np.float64)


def lloyd(points: np.ndarray, init: np.ndarray, max_iters: int = 100, tol: float = 1e-8) -> ClusterResult:
    """Lloyd iterations from given initial centroids.

    Empty clusters are re-seeded at the point farthest from its centroid so
    that k stays fixed.
    """
    centroids = np.array(init, dtype=np.float64)
    k = len(centroids)
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        d2 = _sq_dists(points, centroids)
        assign = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(points)), assign].sum()))
        new = np.empty_like(centroids)
        for j in range(k):
            members = points[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                far = int(np.argmax(d2[np.arange(len(points)), assign]))
                new[j] = points[far]
                assign[far] = j
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dists(points, centroids)
    assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(points)), assign].sum())
    trace.append(inertia)
    return ClusterResult(centroids, assign, inertia, it, trace)


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-8,
           n_init: int = 1, init=None) -> ClusterResult:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts.

    Passing ``init`` (k x d) skips seeding and runs a single Lloyd descent.
    """
    from .numeric import seeded_rng

    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise InvalidInput("points must be a non-empty m x d matrix")
    if k < 1 or k > len(points):
        raise InvalidInput(f"k={k} must satisfy 1 <= k <= m={len(points)}")
    if init is not None:
        return lloyd(points, init, max_iters, tol)
    rng = seeded_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        res = lloyd(points, kmeans_plusplus(points, k, rng), max_iters, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def kmeans_exhaustive_restarts(points, k: int, max_iters: int = 100) -> ClusterResult:
    """Run Lloyd from every k-subset of the data points as initial centroids; keep the best."""
    points = np.asarray(points, dtype=np.float64)
    best = None
    for combo in itertools.combinations(range(len(points)), k):
        res = kmeans(points, k, init=points[list(combo)], max_iters=max_iters, tol=0.0)
        if best is None or res.inertia < best.inertia - 1e-12:
            best = res
    return best


def cluster_loss(points, centroids) -> float:
    """Sum over points of the squared distance to the nearest centroid."""
    centroids = np.asarray(centroids, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if centroids.ndim != 2 or len(centroids) == 0:
        raise InvalidInput("empty centroid set")
    if points.shape[-1] != centroids.shape[1]:
        raise InvalidInput("point and centroid dimensions differ")
    return float(_sq_dists(np.atleast_2d(points), centroids).min(axis=1).sum())


# --------------------------------------------------------------------------
# contrastive objective


def pair_attention(z, tau: float = 0.5) -> np.ndarray:
    """Row-softmax of cosine similarity / tau over all other samples (diagonal is 0)."""
    z = np.asarray(z, dtype=np.float64)
    if len(z) < 2:
        raise InvalidInput("pair attention needs at least two embeddings")
    if tau <= 0:
        raise InvalidInput("tau must be positive")
    logits = cosine_matrix(z) / tau
    np.fill_diagonal(logits, -np.inf)
    return softmax_rows(logits)


def positive_index(n_pairs: int) -> np.ndarray:
    """Rows are laid out as [view a of samples 0..N-1, view b of samples 0..N-1]."""
    idx = np.arange(2 * n_pairs)
    return (idx + n_pairs) % (2 * n_pairs)


def contrastive_loss(z, tau: float = 0.5, attention=None, multiplicative: bool = False,
                     return_grad: bool = False):
    """Attention-augmented contrastive loss, summed over all 2N anchors.

    For anchor i with positive partner p(i) the additive form is
    ``w[i, p(i)] - log(exp(s_ip/tau) / sum_{k != i} exp(s_ik/tau))``.  With
    ``multiplicative=True`` the attention weight scales the log term instead.
    ``attention`` defaults to :func:`pair_attention` and is treated as a
    constant when ``return_grad`` asks for dL/dz.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise EmptyInput("need at least one positive pair")
    if len(z) % 2:
        raise InvalidInput("embeddings must come in pairs (2N rows)")
    if tau <= 0:
        raise InvalidInput("tau must be positive")
    n2 = len(z)
    pos = positive_index(n2 // 2)
    if attention is None:
        attention = pair_attention(z, tau)
    w_pos = np.asarray(attention)[np.arange(n2), pos]

    u, norms = l2_normalize_rows(z)
    logits = np.clip(u @ u.T, -1.0, 1.0) / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    log_den = np.log(np.exp(logits - row_max).sum(axis=1)) + row_max[:, 0]
    nll = log_den - logits[np.arange(n2), pos]
    if multiplicative:
        loss = float((w_pos * nll).sum())
    else:
        loss = float((w_pos + nll).sum())
    if not return_grad:
        return loss

    coef = w_pos if multiplicative else np.ones(n2)
    g = softmax_rows(logits)  # d log_den / d logits, zero on diagonal
    g[np.arange(n2), pos] -= 1.0
    g *= coef[:, None]
    d_u = (g + g.T) @ u / tau
    d_z = (d_u - u * (u * d_u).sum(axis=1, keepdims=True)) / norms[:, None]
    return loss, d_z


# --------------------------------------------------------------------------
# loss weights


@dataclass(frozen=True)
class LossWeights:
    con: float = 1 / 3
    ce: float = 1 / 3
    clu: float = 1 / 3

    def __post_init__(self):
        vals = (self.con, self.ce, self.clu)
        if min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-6:
            raise InvalidInput(f"loss weights {vals} must be non-negative and sum to 1")

    def as_tuple(self):
        return (self.con, self.ce, self.clu)


def total_loss(weights, l_con: float, l_ce: float, l_clu: float) -> float:
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    return weights.con * l_con + weights.ce * l_ce + weights.clu * l_clu


# --------------------------------------------------------------------------
# prototype pseudo-labels


@dataclass
class PseudoLabelRecord:
    index: int
    label: int
    confidence: float
    entropy: float = float("nan")
    retained: bool = False


def prototype_similarities(features, prototypes) -> np.ndarray:
    """m x N cosine similarities; absent classes get -inf."""
    present = prototypes.present
    if not np.any(present):
        raise NoPrototypes("no class has a prototype")
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0):
        raise ZeroNorm("zero-norm feature cannot be compared to prototypes")
    sims = np.full((len(features), len(present)), -np.inf)
    sims[:, present] = np.clip(
        (features / norms[:, None]) @ prototypes.prototypes[present].T, -1.0, 1.0)
    return sims


def assign_pseudo_labels(features, prototypes) -> list[PseudoLabelRecord]:
    sims = prototype_similarities(features, prototypes)
    labels = np.argmax(sims, axis=1)
    conf = sims[np.arange(len(labels)), labels]
    return [PseudoLabelRecord(i, int(l), float(c)) for i, (l, c) in enumerate(zip(labels, conf))]
