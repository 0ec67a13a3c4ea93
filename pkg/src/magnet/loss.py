"""Hybrid objective: bin MSE plus per-level Pearson terms, cross-level consistency."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import InvalidArgumentError

PCC_AXES = ("gene", "sample")


@dataclass(frozen=True)
class LossWeights:
    lambda_b: float = 0.8
    lambda_s: float = 0.25
    lambda_r: float = 0.25
    lambda_1: float = 0.1
    lambda_2: float = 0.1
    gamma_1: float = 1.0
    gamma_2: float = 0.25

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise InvalidArgumentError(f"loss weight {name} must be finite and >= 0, got {value}")

    def level(self, level: str) -> float:
        return {"bin": self.lambda_b, "spot": self.lambda_s, "region": self.lambda_r}[level]


def _check_pair(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise InvalidArgumentError(f"{what}: expected [batch x genes] matrices, got {a.ndim}-D")


def pearson_loss(pred, target, axis: str = "gene") -> Tensor:
    """Mean of ``1 - r`` over columns (``axis="gene"``) or rows (``"sample"``).

    Columns where either argument is constant are skipped; if every column is
    skipped the loss is 0.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target, "pearson_loss")
    if axis not in PCC_AXES:
        raise InvalidArgumentError(f"axis must be one of {PCC_AXES}")
    if axis == "sample":
        pred, target = pred.T, target.T
    if pred.shape[0] < 2:
        raise InvalidArgumentError("Pearson loss needs at least 2 observations per column")
    keep = ~(np.all(pred.data == pred.data[:1], axis=0) | np.all(target.data == target.data[:1], axis=0))
    if not keep.any():
        return Tensor(np.zeros((), dtype=pred.dtype))
    cols = np.flatnonzero(keep)
    x = pred[:, cols]
    y = target[:, cols]
    xc = x - x.mean(axis=0, keepdims=True)
    yc = y - y.mean(axis=0, keepdims=True)
    r = (xc * yc).sum(axis=0) / ((xc * xc).sum(axis=0) * (yc * yc).sum(axis=0)).sqrt()
    return (1.0 - r).mean()


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target, "mse")
    diff = pred - target
    return (diff * diff).mean()


def prediction_loss(p_b, p_s, p_r, y_b, y_s, y_r, weights: LossWeights = LossWeights(),
                    axis: str = "gene", mse_level: str = "bin") -> Tensor:
    """MSE at ``mse_level`` plus weighted Pearson terms at every level.

    A level whose prediction is ``None`` (no multi-resolution heads) is skipped.
    """
    preds = {"bin": p_b, "spot": p_s, "region": p_r}
    targets = {"bin": y_b, "spot": y_s, "region": y_r}
    if preds[mse_level] is None:
        raise InvalidArgumentError(f"no {mse_level}-level prediction for the MSE term")
    total = mse(preds[mse_level], targets[mse_level])
    for level in ("bin", "spot", "region"):
        if preds[level] is None:
            continue
        if targets[level] is None:
            raise InvalidArgumentError(f"missing {level}-level target")
        total = total + weights.level(level) * pearson_loss(preds[level], targets[level], axis)
    return total


def consistency_loss(p_b, p_s, p_r, weights: LossWeights = LossWeights(), axis: str = "gene") -> Tensor:
    """Pearson agreement of bin predictions with spot and region predictions."""
    if p_s is None or p_r is None:
        return Tensor(np.zeros(()))
    p_b, p_s, p_r = as_tensor(p_b), as_tensor(p_s), as_tensor(p_r)
    _check_pair(p_b, p_s, "consistency_loss")
    _check_pair(p_b, p_r, "consistency_loss")
    return weights.lambda_1 * pearson_loss(p_b, p_s, axis) + weights.lambda_2 * pearson_loss(p_b, p_r, axis)


def total_loss(l_p, l_c, weights: LossWeights = LossWeights()):
    return weights.gamma_1 * l_p + weights.gamma_2 * l_c
