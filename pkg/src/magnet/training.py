"""Optimizer, schedule, training loop, evaluation metrics and gradient checking."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import SlideSamples, holdout_split
from .errors import ConfigurationError, InvalidArgumentError, NumericError
from .graph import SpatialGraph, build_knn_graph
from .loss import LossWeights, consistency_loss, mse, prediction_loss, total_loss
from .model import ForwardOutput, MagNet, ModelConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    # optimizer and schedule; full-scale values except the desk-scale lr/batch/steps
    lr0: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    total_steps: int = 2000
    lr_floor_fraction: float = 0.01
    patience: int | None = None
    val_fraction: float = 0.1
    # loss
    weights: LossWeights = field(default_factory=LossWeights)
    consistency: bool = True
    pcc_axis: str = "gene"
    # graph
    top_k: int = 8
    symmetrize: bool = False
    # model
    d: int = 16
    heads: int = 2
    head_dim: int = 8
    rounds: int = 2
    encoders: tuple[str, str, str] = ("builtin-mlp", "builtin-mlp", "builtin-mlp")
    encoder_hidden: int = 32
    patch_shape: tuple[int, int, int] | None = None
    residual: bool = True
    multires: bool = True
    use_gat: bool = True
    aggregate: str = "rounds"
    target_level: str = "bin"
    # data and reproducibility
    holdout_fraction: float = 0.25
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigurationError("lr0 must be positive")
        if not 0 < self.lr_floor_fraction <= 1:
            raise ConfigurationError("lr_floor_fraction must lie in (0, 1]")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 for the Pearson loss")
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError("dtype must be float64 or float32")
        if isinstance(self.weights, Mapping):
            object.__setattr__(self, "weights", LossWeights(**self.weights))
        object.__setattr__(self, "encoders", tuple(self.encoders))
        if self.patch_shape is not None:
            object.__setattr__(self, "patch_shape", tuple(self.patch_shape))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        return cls(**dict(d))

    def model_config(self, n_genes: int, input_dims: Sequence[int]) -> ModelConfig:
        return ModelConfig(
            n_genes=n_genes, input_dims=tuple(input_dims), d=self.d, heads=self.heads,
            head_dim=self.head_dim, rounds=self.rounds, encoders=self.encoders,
            encoder_hidden=self.encoder_hidden, patch_shape=self.patch_shape,
            residual=self.residual, multires=self.multires, use_gat=self.use_gat,
            aggregate=self.aggregate, target_level=self.target_level,
        )


# --------------------------------------------------------------------------
# Schedule and optimizer
# --------------------------------------------------------------------------


def cosine_lr(step: int, total_steps: int, lr0: float, floor_fraction: float = 0.01) -> float:
    """Cosine decay from ``lr0`` at step 0 to ``floor_fraction * lr0`` at ``total_steps``."""
    lr_min = floor_fraction * lr0
    if step >= total_steps:
        return lr_min if total_steps > 0 else lr0
    if step <= 0:
        return lr0
    return lr_min + (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             velocity: Mapping[str, np.ndarray], config, lr: float):
    """SGD with coupled weight decay and heavy-ball momentum.

    Returns new ``(params, velocity)`` dicts covering the keys of ``grads``;
    tensors without a gradient are left out of the update.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    new_p, new_v = {}, {}
    for name, g in grads.items():
        p = params[name]
        g = g + config.weight_decay * p
        v = config.momentum * velocity[name] + g if name in velocity else g
        new_v[name] = v
        new_p[name] = p - lr * v
    return new_p, new_v


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def _column_pcc(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pc = pred - pred.mean(axis=0)
    tc = target - target.mean(axis=0)
    denom = np.sqrt((pc * pc).sum(axis=0) * (tc * tc).sum(axis=0))
    const = np.all(pred == pred[:1], axis=0) | np.all(target == target[:1], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (pc * tc).sum(axis=0) / denom
    r = np.clip(r, -1.0, 1.0)
    r[const] = np.nan
    return r


@dataclass
class MetricsReport:
    level: str
    gene_names: tuple[str, ...]
    mse: float
    mae: float
    pcc: float
    per_gene: dict[str, list[float]]
    n_units: int
    std: dict[str, float] = field(default_factory=dict)
    folds: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            return x

        return {
            "level": self.level,
            "n_units": self.n_units,
            "mean": {"mse": clean(self.mse), "mae": clean(self.mae), "pcc": clean(self.pcc)},
            "std": {k: clean(v) for k, v in self.std.items()},
            "per_gene": {
                "gene": list(self.gene_names),
                **{k: [clean(float(v)) for v in vals] for k, vals in self.per_gene.items()},
            },
            "folds": self.folds,
        }


def compute_metrics(pred: np.ndarray, target: np.ndarray, level: str = "bin",
                    gene_names: Sequence[str] | None = None) -> MetricsReport:
    """MSE and MAE over all entries; PCC per gene across units, constant genes skipped."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise InvalidArgumentError(f"prediction/target shape mismatch {pred.shape} vs {target.shape}")
    err = pred - target
    pcc = _column_pcc(pred, target) if len(pred) >= 2 else np.full(pred.shape[1], np.nan)
    finite = pcc[np.isfinite(pcc)]
    names = tuple(gene_names) if gene_names is not None else tuple(f"g{i}" for i in range(pred.shape[1]))
    return MetricsReport(
        level=level, gene_names=names,
        mse=float(np.mean(err * err)), mae=float(np.mean(np.abs(err))),
        pcc=float(finite.mean()) if finite.size else float("nan"),
        per_gene={"mse": list(np.mean(err * err, axis=0)), "mae": list(np.mean(np.abs(err), axis=0)),
                  "pcc": list(pcc)},
        n_units=int(pred.shape[0]),
    )


def aggregate_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean and population std of per-fold means."""
    if not reports:
        raise InvalidArgumentError("nothing to aggregate")
    vals = {k: np.array([getattr(r, k) for r in reports]) for k in ("mse", "mae", "pcc")}
    per_gene = {}
    for k in ("mse", "mae", "pcc"):
        stacked = np.array([r.per_gene[k] for r in reports], dtype=np.float64)
        with np.errstate(invalid="ignore"), np.testing.suppress_warnings() as sup:
            sup.filter(RuntimeWarning)
            per_gene[k] = list(np.nanmean(stacked, axis=0))
    return MetricsReport(
        level=reports[0].level, gene_names=reports[0].gene_names,
        mse=float(vals["mse"].mean()), mae=float(vals["mae"].mean()), pcc=float(np.nanmean(vals["pcc"])),
        per_gene=per_gene, n_units=int(sum(r.n_units for r in reports)),
        std={k: float(np.nanstd(v)) for k, v in vals.items()},
        folds=[{"mse": r.mse, "mae": r.mae, "pcc": r.pcc, "n_units": r.n_units} for r in reports],
    )


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: MagNet
    history: list[dict]
    initial: dict[str, np.ndarray]
    train_nodes: dict[str, np.ndarray]
    stopped_early: bool = False

    @property
    def frozen_unchanged(self) -> bool:
        return all(np.array_equal(self.initial[n], self.model.params[n].data) for n in self.model.frozen_names())


def objective(out: ForwardOutput, samples: SlideSamples, nodes: np.ndarray, config: TrainConfig):
    """``(L_p, L_c, L, extras)`` on ``nodes`` of one slide."""
    y = {lvl: samples.targets(lvl)[nodes] for lvl in ("bin", "spot", "region")}
    w = config.weights
    l_p = prediction_loss(out.p_b, out.p_s, out.p_r, y["bin"], y["spot"], y["region"], w,
                          axis=config.pcc_axis, mse_level=config.target_level)
    l_c = consistency_loss(out.p_b, out.p_s, out.p_r, w, axis=config.pcc_axis)
    total = total_loss(l_p, l_c, w) if config.consistency else w.gamma_1 * l_p
    extras = {}
    for lvl in ("bin", "spot", "region"):
        p = out.prediction(lvl)
        if p is not None and lvl != config.target_level:
            extras[f"mse_{lvl}"] = float(mse(p.data, y[lvl]))
    return l_p, l_c, total, extras


def build_graphs(samples: Sequence[SlideSamples], config: TrainConfig) -> list[SpatialGraph]:
    return [build_knn_graph(s.coords, config.top_k, config.symmetrize) for s in samples]


def init_model(samples: Sequence[SlideSamples], config: TrainConfig) -> MagNet:
    first = samples[0]
    for s in samples[1:]:
        if s.gene_names != first.gene_names:
            raise ConfigurationError(f"slide {s.slide_id!r} has a different gene panel than {first.slide_id!r}")
        if (s.x_b.shape[-1], s.x_s.shape[-1], s.x_r.shape[-1]) != (
                first.x_b.shape[-1], first.x_s.shape[-1], first.x_r.shape[-1]):
            raise ConfigurationError(f"slide {s.slide_id!r} has different feature widths")
    mcfg = config.model_config(len(first.gene_names),
                               (first.x_b.shape[-1], first.x_s.shape[-1], first.x_r.shape[-1]))
    return MagNet.initialize(mcfg, seed=config.seed, dtype=np.dtype(config.dtype))


def _epoch_batches(train_nodes: Sequence[np.ndarray], batch_size: int, rng: np.random.Generator):
    batches = []
    for si, nodes in enumerate(train_nodes):
        perm = rng.permutation(nodes)
        chunks = [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) < 2:
            chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
        batches.extend((si, c) for c in chunks if len(c) >= 2)
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train(samples: Sequence[SlideSamples], config: TrainConfig,
          exclude: Mapping[str, np.ndarray] | None = None,
          model: MagNet | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on every node of ``samples`` except the positions listed in ``exclude``."""
    if not samples:
        raise InvalidArgumentError("no training slides")
    exclude = exclude or {}
    graphs = build_graphs(samples, config)
    model = model or init_model(samples, config)
    initial = model.arrays()
    rng = np.random.default_rng(config.seed + 1)

    train_nodes, val_nodes = [], []
    for s in samples:
        nodes = np.setdiff1d(np.arange(len(s)), np.asarray(exclude.get(s.slide_id, []), dtype=np.int64))
        if config.patience:
            tr, va = holdout_split(len(nodes), config.val_fraction, config.seed + 2)
            train_nodes.append(nodes[tr])
            val_nodes.append(nodes[va])
        else:
            train_nodes.append(nodes)
        if len(train_nodes[-1]) < 2:
            raise InvalidArgumentError(f"slide {s.slide_id!r} has fewer than 2 training nodes")

    history: list[dict] = []
    velocity: dict[str, np.ndarray] = {}
    trainable = model.trainable_names()
    step, epoch, best, stale, stopped = 0, 0, math.inf, 0, False
    while step < config.total_steps and not stopped:
        for b, (si, batch) in enumerate(_epoch_batches(train_nodes, config.batch_size, rng)):
            if step >= config.total_steps:
                break
            lr = cosine_lr(step, config.total_steps, config.lr0, config.lr_floor_fraction)
            out = model.forward(samples[si], graphs[si], batch=batch)
            l_p, l_c, loss, extras = objective(out, samples[si], batch, config)
            if not np.isfinite(loss.item()):
                raise NumericError(
                    f"non-finite loss at step {step} (epoch {epoch}, batch {b}, slide {samples[si].slide_id!r}, "
                    f"bins {samples[si].bin_index[batch].tolist()})")
            grads = model.backward(loss)
            params = {n: model.params[n].data for n in trainable}
            new_p, velocity = sgd_step(params, grads, velocity, config, lr)
            for n, v in new_p.items():
                model.params[n].data = v
            rec = {"step": step, "lr": lr, "L_p": l_p.item(), "L_c": float(l_c), "L": loss.item(), **extras}
            history.append(rec)
            if on_step is not None:
                on_step(rec)
            step += 1
        epoch += 1
        if config.patience and val_nodes:
            val = 0.0
            for s, g, nodes in zip(samples, graphs, val_nodes):
                if len(nodes) >= 2:
                    val += objective(model.forward(s, g, batch=nodes), s, nodes, config)[2].item()
            if val < best - 1e-12:
                best, stale = val, 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.info("early stop after %d epochs without validation improvement", stale)
                    stopped = True
    return TrainResult(model, history, initial,
                       {s.slide_id: n for s, n in zip(samples, train_nodes)}, stopped_early=stopped)


def evaluate(model: MagNet, samples: SlideSamples, level: str = "bin", nodes=None,
             graph: SpatialGraph | None = None, top_k: int = 8, symmetrize: bool = False) -> MetricsReport:
    """Metrics of ``model`` on one slide (restricted to ``nodes`` positions when given)."""
    if model.config.n_genes != len(samples.gene_names):
        raise ConfigurationError(
            f"checkpoint predicts {model.config.n_genes} genes but the dataset has {len(samples.gene_names)}")
    graph = graph or build_knn_graph(samples.coords, top_k, symmetrize)
    nodes = np.arange(len(samples)) if nodes is None else np.asarray(nodes, dtype=np.int64)
    pred = model.predict(samples, graph, level=level)[nodes]
    return compute_metrics(pred, samples.targets(level)[nodes], level, samples.gene_names)


# --------------------------------------------------------------------------
# Cross-validation drivers
# --------------------------------------------------------------------------


@dataclass
class FoldOutcome:
    fold: int
    train_slides: list[str]
    test_slides: list[str]
    result: TrainResult
    eval_nodes: dict[str, np.ndarray]
    reports: dict[str, MetricsReport]


def run_holdout(samples: SlideSamples, config: TrainConfig, levels: Iterable[str] = ("bin",),
                **kw) -> FoldOutcome:
    """Single slide: train on a seeded fraction of bins, evaluate on the rest."""
    _, test = holdout_split(len(samples), config.holdout_fraction, config.seed)
    result = train([samples], config, exclude={samples.slide_id: test}, **kw)
    graph = build_knn_graph(samples.coords, config.top_k, config.symmetrize)
    reports = {lvl: evaluate(result.model, samples, lvl, test, graph) for lvl in levels
               if result.model.config.multires or lvl == "bin"}
    return FoldOutcome(0, [samples.slide_id], [samples.slide_id], result, {samples.slide_id: test}, reports)


def run_fold(all_samples: Sequence[SlideSamples], train_ids: Sequence[str], test_ids: Sequence[str],
             config: TrainConfig, fold: int = 0, levels: Iterable[str] = ("bin",), **kw) -> FoldOutcome:
    by_id = {s.slide_id: s for s in all_samples}
    result = train([by_id[i] for i in train_ids], config, **kw)
    reports = {}
    for lvl in levels:
        if lvl != "bin" and not result.model.config.multires:
            continue
        preds, targets = [], []
        for sid in test_ids:
            s = by_id[sid]
            g = build_knn_graph(s.coords, config.top_k, config.symmetrize)
            preds.append(result.model.predict(s, g, level=lvl))
            targets.append(s.targets(lvl))
        reports[lvl] = compute_metrics(np.concatenate(preds), np.concatenate(targets), lvl,
                                       all_samples[0].gene_names)
    eval_nodes = {sid: np.arange(len(by_id[sid])) for sid in test_ids}
    return FoldOutcome(fold, list(train_ids), list(test_ids), result, eval_nodes, reports)


# --------------------------------------------------------------------------
# Gradient check
# --------------------------------------------------------------------------


# Below this magnitude a central difference at h=1e-5 is dominated by
# cancellation noise (~1e-10), so tiny gradients are compared absolutely.
GRADCHECK_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    passed: bool
    worst: tuple[str, tuple]
    n_checked: int
    tolerance: float


def relative_error(analytic: float, numeric: float, floor: float = GRADCHECK_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(model: MagNet, loss_fn: Callable[[], "object"], tolerance: float = 1e-4,
                   h: float = 1e-5, max_per_tensor: int | None = None, names: Sequence[str] | None = None,
                   analytic: Mapping[str, np.ndarray] | None = None, seed: int = 0,
                   floor: float = GRADCHECK_FLOOR) -> GradCheckResult:
    """Central finite differences against reverse-mode gradients.

    ``loss_fn`` must run a fresh forward pass and return the scalar loss tensor.
    ``analytic`` overrides the gradients under test (used for negative controls).
    """
    if model.dtype != np.float64:
        raise ConfigurationError("gradient checking needs a float64 model")
    if analytic is None:
        analytic = model.backward(loss_fn())
    names = list(names) if names is not None else list(analytic)
    rng = np.random.default_rng(seed)
    worst_err, worst, count = 0.0, ("", ()), 0
    for name in names:
        param = model.params[name].data
        positions = list(np.ndindex(param.shape))
        if max_per_tensor is not None and len(positions) > max_per_tensor:
            pick = rng.choice(len(positions), size=max_per_tensor, replace=False)
            positions = [positions[i] for i in sorted(pick)]
        for idx in positions:
            old = param[idx]
            param[idx] = old + h
            up = float(loss_fn())
            param[idx] = old - h
            down = float(loss_fn())
            param[idx] = old
            numeric = (up - down) / (2 * h)
            err = relative_error(float(analytic[name][idx]), numeric, floor)
            count += 1
            if err > worst_err:
                worst_err, worst = err, (name, idx)
    return GradCheckResult(worst_err, worst_err < tolerance, worst, count, tolerance)


def composite_loss_fn(model: MagNet, inputs, graph: SpatialGraph, samples_targets: Mapping[str, np.ndarray],
                      config: TrainConfig | None = None, batch=None):
    """Closure computing the full training objective on fixed inputs (for gradient checks)."""
    config = config or TrainConfig()
    nodes = np.arange(graph.n_nodes) if batch is None else np.asarray(batch)

    def fn():
        out = model.forward(inputs, graph, batch=batch)
        y = {k: np.asarray(v)[nodes] for k, v in samples_targets.items()}
        w = config.weights
        l_p = prediction_loss(out.p_b, out.p_s, out.p_r, y["bin"], y["spot"], y["region"], w,
                              axis=config.pcc_axis, mse_level=config.target_level)
        l_c = consistency_loss(out.p_b, out.p_s, out.p_r, w, axis=config.pcc_axis)
        return total_loss(l_p, l_c, w) if config.consistency else w.gamma_1 * l_p

    return fn


def full_scale_config(**overrides) -> TrainConfig:
    """Optimizer and batch settings reported for the full-scale experiments."""
    return replace(TrainConfig(lr0=1e-4, batch_size=256), **overrides)
