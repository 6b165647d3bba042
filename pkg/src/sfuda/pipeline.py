"""End-to-end source-free adaptation runs, metrics output and the ablation grid.

One epoch runs the three phases over the whole target set (prototype
generation from reliable samples, multi-view pseudo-label assignment, noisy
label filtering) and then takes SGD steps on the composite objective over
shuffled mini-batches.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import filtering, rsm
from .data import Dataset
from .errors import EmptyInput, FrozenModel, InvalidInput
from .model import ModelParams, extract_features, predict_with_entropy, sgd_step
from .mvcl import (LossWeights, TransformSpec, assign_pseudo_labels, augment_views,
                   build_view_bundle, default_views, fuse, kmeans, pair_attention)
from .numeric import seeded_rng
from .objective import AdaptBatch, LossSpec, fused_embeddings, loss_and_grad

log = logging.getLogger(__name__)

SCHEDULE_START = (0.25, 0.5, 0.25)
SCHEDULE_END = (0.4, 0.2, 0.4)


@dataclass
class AdaptConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    lambda_schedule: str = "linear"  # "linear" or "constant"
    lambdas: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    tau: float = 0.5
    views: tuple[TransformSpec, ...] = field(default_factory=lambda: tuple(default_views(2)))
    rho: int = 5
    rsm_window: int | None = None
    seed: int = 0
    strict_rho: bool = False
    multiplicative_attention: bool = False
    entropy_scale: str = "log_classes"  # or "class_minmax"
    kmeans_iters: int = 50
    pa: bool = True
    pla: bool = True
    nf: bool = True
    fixed_eta: float | None = None  # test-harness sensitivity sweeps only

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInput("epochs must be >= 0 and batch_size >= 1")
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise InvalidInput("need lr > 0 and 0 <= momentum < 1")
        if self.tau <= 0:
            raise InvalidInput("tau must be positive")
        if self.rho < 1:
            raise InvalidInput("rho must be positive")
        if self.lambda_schedule not in ("linear", "constant"):
            raise InvalidInput(f"unknown lambda schedule {self.lambda_schedule!r}")
        if self.entropy_scale not in ("log_classes", "class_minmax"):
            raise InvalidInput(f"unknown entropy scale {self.entropy_scale!r}")
        if (self.pla or self.nf) and not self.pa:
            raise InvalidInput("PLA and NF both require PA")
        if self.pla and len(self.views) < 1:
            raise InvalidInput("at least one view is required")
        LossWeights(*self.lambdas)
        for epoch in range(max(self.epochs, 1)):
            self.lambdas_at(epoch)

    def lambdas_at(self, epoch: int) -> LossWeights:
        if self.lambda_schedule == "constant":
            lam = np.array(self.lambdas, dtype=np.float64)
        else:
            t = epoch / max(self.epochs - 1, 1)
            lam = (1 - t) * np.array(SCHEDULE_START) + t * np.array(SCHEDULE_END)
            lam = lam / lam.sum()
        if not self.pla:
            # single view: the contrastive term has no second view to contrast against
            lam = np.array([0.0, lam[1], lam[2]])
            if lam.sum() == 0:
                raise InvalidInput("lambda weights vanish once the contrastive term is disabled")
            lam = lam / lam.sum()
        return LossWeights(*lam)


@dataclass
class EpochMetrics:
    epoch: int
    eta: float
    theta: float
    theta_star: float
    alpha: list[float]
    labeling_rate: float
    pseudo_label_accuracy: float | None
    unfiltered_pseudo_label_accuracy: float | None
    model_accuracy: float | None
    l_con: float
    l_ce: float
    l_clu: float
    l_total: float
    lambdas: tuple[float, float, float]
    view_weights: list[float]
    inertia: float
    n_reliable: int


class Evaluator:
    """Holds ground-truth target labels; only scores predictions, never exposes labels."""

    def __init__(self, labels):
        self.__labels = np.asarray(labels, dtype=int).copy()
        self.__labels.flags.writeable = False

    def __len__(self):
        return len(self.__labels)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "Evaluator | None":
        return None if ds.labels is None else cls(ds.labels)

    def accuracy(self, predictions) -> float:
        return accuracy(predictions, self.__labels)

    def subset_accuracy(self, indices, predictions) -> float | None:
        indices = np.asarray(indices, dtype=int)
        if len(indices) == 0:
            return None
        return accuracy(predictions, self.__labels[indices])


def accuracy(predictions, ground_truth) -> float:
    predictions = np.asarray(predictions)
    ground_truth = np.asarray(ground_truth)
    if len(predictions) == 0 and len(ground_truth) == 0:
        raise EmptyInput("accuracy of an empty prediction set")
    if len(predictions) != len(ground_truth):
        raise InvalidInput("predictions and labels differ in length")
    return float(np.mean(predictions == ground_truth))


def _grouped(values, labels, n_classes):
    return [values[labels == c] for c in range(n_classes)]


class Adapter:
    """Stateful adaptation run.  Exposes the entropy matrix, memory and
    threshold history after :meth:`run` for inspection."""

    def __init__(self, source: ModelParams, cfg: AdaptConfig, evaluator: Evaluator | None = None):
        if not source.frozen:
            raise FrozenModel("the source model must be frozen")
        cfg.validate()
        self.source = source
        self.cfg = cfg
        self.evaluator = evaluator
        self.entropy_matrix = rsm.EntropyMatrix(source.n_classes, window=cfg.rsm_window)
        self.memory: rsm.ReliableSampleMemory | None = None
        self.thresholds = filtering.ThresholdHistory(cfg.rho)

    def _scaled_entropy(self, raw, labels):
        n = self.source.n_classes
        if self.cfg.entropy_scale == "class_minmax":
            return rsm.normalize_per_class(raw, labels, n)[0]
        return np.clip(raw / math.log(n), 0.0, 1.0)

    def run(self, target: Dataset | np.ndarray):
        cfg = self.cfg
        x = target.inputs if isinstance(target, Dataset) else np.asarray(target, dtype=np.float64)
        if len(x) == 0:
            raise EmptyInput("target set is empty")
        if x.shape[1] != self.source.dims[0]:
            raise InvalidInput("target dimension does not match the source model")
        params = self.source.copy(frozen=False)
        n_classes = params.n_classes
        rng = seeded_rng(cfg.seed)
        views = list(cfg.views) if cfg.pla else [TransformSpec.identity()]
        loss_spec = LossSpec(tau=cfg.tau, multiplicative=cfg.multiplicative_attention)
        velocity = None
        history = []

        for epoch in range(cfg.epochs):
            # phase 1: entropy bookkeeping, eta, reliable samples, prototypes
            pred, raw_h = predict_with_entropy(params, x)
            rsm.record_iteration(self.entropy_matrix, _grouped(raw_h, pred, n_classes))
            eta = rsm.compute_threshold(self.entropy_matrix)
            if cfg.fixed_eta is not None:
                eta = cfg.fixed_eta
            norm_h, _ = rsm.normalize_per_class(raw_h, pred, n_classes)
            self.memory = rsm.build_memory(list(enumerate(raw_h)), min(n_classes, len(x)))
            reliable = rsm.select_reliable(norm_h, eta)

            # phase 2: multi-view embeddings and prototype pseudo-labels
            bundle = build_view_bundle(params, x, views, rng)
            w_views = bundle.view_weights
            if cfg.pla:
                space = bundle.fused
            else:
                space = extract_features(params, x)[1]
            protos = rsm.compute_prototypes(space[reliable], pred[reliable], n_classes)
            records = assign_pseudo_labels(space, protos)
            pseudo = np.array([r.label for r in records])

            # phase 3: adaptive filtering on the pseudo-label groups
            scaled = self._scaled_entropy(raw_h, pseudo)
            for r in records:
                r.entropy = float(scaled[r.index])
            theta = filtering.epoch_threshold(_grouped(scaled, pseudo, n_classes))
            self.thresholds.push(theta)
            _, alpha = filtering.attention_scores(self.thresholds)
            theta_star = filtering.weighted_threshold(self.thresholds, strict=cfg.strict_rho)
            if cfg.nf:
                kept, rate = filtering.filter_labels(records, theta_star)
                if not kept:
                    kept = self._fallback(records, pseudo, scaled)
                    rate = len(kept) / len(records)
            else:
                for r in records:
                    r.retained = True
                kept, rate = records, 1.0
            retained = np.array([r.index for r in kept], dtype=int)

            # clustering of the fused embeddings
            clusters = kmeans(bundle.fused, min(n_classes, len(x)), seed=int(rng.integers(2**32)),
                              max_iters=cfg.kmeans_iters)

            lam = cfg.lambdas_at(epoch)
            sums = {"l_con": [], "l_ce": [], "l_clu": [], "l_total": []}
            if cfg.pa:
                is_kept = np.zeros(len(x), dtype=bool)
                is_kept[retained] = True
                spec = replace(loss_spec, weights=lam)
                order = rng.permutation(len(x))
                for start in range(0, len(x), cfg.batch_size):
                    idx = order[start:start + cfg.batch_size]
                    batch = self._make_batch(params, x, idx, views, w_views, clusters.centroids,
                                             is_kept, pseudo, rng, spec)
                    parts = {}
                    total, grads = loss_and_grad(params, batch, spec, components=parts)
                    params, velocity = sgd_step(params, grads, cfg.lr, cfg.momentum, velocity)
                    parts["l_total"] = total
                    for k in sums:
                        if not math.isnan(parts[k]):
                            sums[k].append(parts[k])

            history.append(self._metrics(epoch, params, x, eta, theta, theta_star, alpha, rate,
                                         retained, pseudo, sums, lam, w_views, clusters.inertia,
                                         len(reliable)))
        return params, history

    def _fallback(self, records, pseudo, scaled):
        """Keep the lowest-entropy sample of every present pseudo-class."""
        kept = []
        for c in np.unique(pseudo):
            members = np.flatnonzero(pseudo == c)
            best = members[np.argmin(scaled[members])]
            records[best].retained = True
            kept.append(records[best])
        return kept

    def _make_batch(self, params, x, idx, views, w_views, centroids, is_kept, pseudo, rng, spec):
        xb = x[idx]
        views_a = augment_views(xb, views, rng)
        views_b = augment_views(xb, views, rng) if spec.weights.con > 0 and len(idx) > 1 else []
        attention = None
        if views_b:
            z_a, _ = fused_embeddings(params, views_a, w_views)
            z_b, _ = fused_embeddings(params, views_b, w_views)
            attention = pair_attention(np.vstack([z_a, z_b]), spec.tau)
        ce_idx = idx[is_kept[idx]]
        return AdaptBatch(views_a, views_b, w_views, centroids, attention,
                          x[ce_idx], pseudo[ce_idx])

    def _metrics(self, epoch, params, x, eta, theta, theta_star, alpha, rate, retained, pseudo,
                 sums, lam, w_views, inertia, n_reliable):
        ev = self.evaluator
        model_acc = plabel_acc = unfiltered_acc = None
        if ev is not None:
            pred_after, _ = predict_with_entropy(params, x)
            model_acc = ev.accuracy(pred_after)
            plabel_acc = ev.subset_accuracy(retained, pseudo[retained])
            unfiltered_acc = ev.accuracy(pseudo)

        def mean(k):
            return float(np.mean(sums[k])) if sums[k] else float("nan")

        return EpochMetrics(
            epoch=epoch, eta=eta, theta=theta, theta_star=theta_star,
            alpha=[float(a) for a in alpha], labeling_rate=rate,
            pseudo_label_accuracy=plabel_acc, unfiltered_pseudo_label_accuracy=unfiltered_acc,
            model_accuracy=model_acc, l_con=mean("l_con"), l_ce=mean("l_ce"),
            l_clu=mean("l_clu"), l_total=mean("l_total"), lambdas=lam.as_tuple(),
            view_weights=[float(w) for w in w_views], inertia=float(inertia), n_reliable=n_reliable,
        )


def adapt(source: ModelParams, target, cfg: AdaptConfig | None = None,
          evaluator: Evaluator | None = None):
    """Adapt a copy of the frozen ``source`` model to unlabeled ``target`` data.

    ``target`` labels, if any, are ignored; pass an :class:`Evaluator` to get
    accuracies in the metrics.  Returns ``(adapted_params, epoch_metrics)``.
    """
    return Adapter(source, cfg or AdaptConfig(), evaluator).run(target)


# --------------------------------------------------------------------------
# metrics files

METRIC_COLUMNS = [
    "epoch", "eta", "theta", "theta_star", "alpha", "labeling_rate", "pseudo_label_accuracy",
    "unfiltered_pseudo_label_accuracy", "model_accuracy", "l_con", "l_ce", "l_clu", "l_total",
    "lambda_1", "lambda_2", "lambda_3", "inertia", "n_reliable",
]


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def emit_metrics(history: Sequence[EpochMetrics], path) -> tuple[Path, Path]:
    """Write ``metrics.csv`` and ``summary.json`` into directory ``path``.

    CSV columns are :data:`METRIC_COLUMNS` followed by ``w_1..w_V``; ``alpha``
    is a ';'-joined list and missing values are empty cells.
    """
    if not history:
        raise EmptyInput("no epochs to write")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    n_views = len(history[0].view_weights)
    header = METRIC_COLUMNS + [f"w_{v + 1}" for v in range(n_views)]
    csv_path, json_path = out / "metrics.csv", out / "summary.json"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for m in history:
            row = [m.epoch, m.eta, m.theta, m.theta_star, ";".join(repr(a) for a in m.alpha),
                   m.labeling_rate, m.pseudo_label_accuracy, m.unfiltered_pseudo_label_accuracy,
                   m.model_accuracy, m.l_con, m.l_ce, m.l_clu, m.l_total, *m.lambdas,
                   m.inertia, m.n_reliable, *m.view_weights]
            writer.writerow([r if isinstance(r, str) else _fmt(r) for r in row])
    json_path.write_text(json.dumps(summarize(history), indent=2) + "\n")
    return csv_path, json_path


def summarize(history: Sequence[EpochMetrics]) -> dict:
    last = history[-1]
    return {"final_accuracy": last.model_accuracy, "final_labeling_rate": last.labeling_rate,
            "epochs": len(history)}


def load_summary(path) -> dict:
    return json.loads(Path(path).read_text())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# ablation grid and lambda sweep

ABLATION_CELLS = {
    "Base": dict(pa=False, pla=False, nf=False),
    "+PA": dict(pa=True, pla=False, nf=False),
    "+PA+PLA": dict(pa=True, pla=True, nf=False),
    "+PA+PLA+NF": dict(pa=True, pla=True, nf=True),
}


def direct_transfer_accuracy(source: ModelParams, inputs, evaluator: Evaluator) -> float:
    pred, _ = predict_with_entropy(source, inputs)
    return evaluator.accuracy(pred)


def _run_cell(args):
    source, inputs, labels, cfg = args
    ev = Evaluator(labels)
    if not cfg.pa:
        return direct_transfer_accuracy(source, inputs, ev)
    params, _ = adapt(source, inputs, cfg, ev)
    return ev.accuracy(predict_with_entropy(params, inputs)[0])


def ablation_grid(source: ModelParams, inputs, truth, base_cfg: AdaptConfig,
                  seeds: Sequence[int] = (0,), workers: int = 1) -> dict[str, list[float]]:
    """Accuracy of every ablation cell for each seed, ``{cell: [acc per seed]}``.

    The Base cell is direct transfer of the frozen source model.
    """
    jobs, keys = [], []
    for name, flags in ABLATION_CELLS.items():
        for s in seeds:
            cfg = replace(base_cfg, seed=s, **flags)
            cfg.validate()
            jobs.append((source, np.asarray(inputs), np.asarray(truth), cfg))
            keys.append(name)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    table = {name: [] for name in ABLATION_CELLS}
    for k, r in zip(keys, results):
        table[k].append(r)
    return table


def ablation_rows(table: dict[str, list[float]]) -> list[tuple[str, float]]:
    return [(name, 100.0 * float(np.mean(accs))) for name, accs in table.items()]


def write_ablation(table, path) -> tuple[Path, Path]:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    rows = ablation_rows(table)
    csv_path, txt_path = out / "ablation.csv", out / "ablation.txt"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "accuracy", "n_seeds"])
        for name, acc in rows:
            writer.writerow([name, f"{acc:.2f}", len(table[name])])
    width = max(len(n) for n, _ in rows)
    lines = [f"{'Setting':<{width}}  Accuracy (%)", "-" * (width + 14)]
    lines += [f"{name:<{width}}  {acc:12.2f}" for name, acc in rows]
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


def simplex_grid(step: float) -> list[tuple[float, float, float]]:
    """All (l1, l2, l3) on the simplex with coordinates that are multiples of ``step``.

    Ordered by descending l1, then descending l2.
    """
    if step <= 0:
        raise InvalidInput("grid step must be positive")
    n = round(1.0 / step)
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise InvalidInput(f"step {step} does not divide the simplex")
    return [(i / n, j / n, (n - i - j) / n)
            for i in range(n, -1, -1) for j in range(n - i, -1, -1)]


def sweep_lambda(source, inputs, truth, base_cfg: AdaptConfig, step: float):
    rows = []
    ev = Evaluator(truth)
    for lam in simplex_grid(step):
        cfg = replace(base_cfg, lambda_schedule="constant", lambdas=lam)
        params, _ = adapt(source, inputs, cfg, ev)
        rows.append((*lam, ev.accuracy(predict_with_entropy(params, inputs)[0])))
    return rows


def config_dict(cfg: AdaptConfig) -> dict:
    d = asdict(cfg)
    d["views"] = [v.kind for v in cfg.views]
    return d
