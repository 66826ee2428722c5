"""Training losses and correlation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.stats import rankdata

from .errors import ShapeMismatchError, UndefinedCorrelationError


@dataclass
class LossConfig:
    alpha: float = 2.0
    lambda1: float = 0.5
    lambda2: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


def _check_pair(y, t, min_n):
    if y.shape != t.shape or y.dim() != 1:
        raise ShapeMismatchError(f"predictions {tuple(y.shape)} and targets {tuple(t.shape)} must be equal-length vectors")
    if y.numel() < min_n:
        raise ValueError(f"need at least {min_n} samples, got {y.numel()}")


def mse_loss(y: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    _check_pair(y, t, 1)
    return ((y - t) ** 2).mean()


def ranking_loss(y: torch.Tensor, t: torch.Tensor, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Mean over unordered pairs of (sig(a(t_i - t_j)) - sig(a(y_i - y_j)))^2."""
    _check_pair(y, t, 2)
    n = y.numel()
    i, j = torch.triu_indices(n, n, offset=1, device=y.device)
    target = torch.sigmoid(cfg.alpha * (t[i] - t[j]))
    pred = torch.sigmoid(cfg.alpha * (y[i] - y[j]))
    return ((target - pred) ** 2).sum() * (2.0 / (n * (n - 1)))


def total_loss(y: torch.Tensor, t: torch.Tensor, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return cfg.lambda1 * mse_loss(y, t) + cfg.lambda2 * ranking_loss(y, t, cfg)


def _as_vectors(y, t):
    y = np.asarray(y, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    if y.shape != t.shape:
        raise ShapeMismatchError(f"length mismatch: {y.size} vs {t.size}")
    if y.size < 2:
        raise ValueError("correlation needs at least 2 samples")
    return y, t


def plcc(y, t) -> float:
    """Pearson linear correlation."""
    y, t = _as_vectors(y, t)
    dy, dt = y - y.mean(), t - t.mean()
    sy, st = np.sqrt(dy @ dy), np.sqrt(dt @ dt)
    if sy == 0 or st == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return float(np.clip((dy @ dt) / (sy * st), -1.0, 1.0))


def srocc(y, t) -> float:
    """Spearman rank correlation; ties share their average rank."""
    y, t = _as_vectors(y, t)
    return plcc(rankdata(y, method="average"), rankdata(t, method="average"))
