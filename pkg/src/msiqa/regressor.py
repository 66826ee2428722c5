"""Two-branch score head: Score = S * W."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatchError


class _Branch(nn.Module):
    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def hidden(self, x, slope):
        if x.shape[-1] != self.fc1.in_features:
            raise ShapeMismatchError(f"branch expects width {self.fc1.in_features}, got {x.shape[-1]}")
        return F.leaky_relu(self.fc1(x), slope)


class ScoreRegressor(nn.Module):
    """Score branch on ``f_s`` (two leaky layers) times weight branch on ``f_w`` (sigmoid gate).

    With ``use_weight_branch=False`` the weight branch is not built and the
    prediction is the score branch alone.
    """

    def __init__(self, fs_dim: int, fw_dim: int, hidden: int = 128, leaky_slope: float = 0.01,
                 use_weight_branch: bool = True):
        super().__init__()
        if hidden <= 0:
            raise ValueError("hidden width must be positive")
        self.leaky_slope = leaky_slope
        self.score = _Branch(fs_dim, hidden)
        self.weight = _Branch(fw_dim, hidden) if use_weight_branch else None

    def score_branch(self, f_s: torch.Tensor) -> torch.Tensor:
        h = self.score.hidden(f_s, self.leaky_slope)
        return F.leaky_relu(self.score.fc2(h), self.leaky_slope).squeeze(-1)

    def weight_branch(self, f_w: torch.Tensor) -> torch.Tensor:
        if self.weight is None:
            raise RuntimeError("weight branch is disabled")
        h = self.weight.hidden(f_w, self.leaky_slope)
        return torch.sigmoid(self.weight.fc2(h)).squeeze(-1)

    def forward(self, f_w: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        s = self.score_branch(f_s)
        if self.weight is None:
            return s
        return s * self.weight_branch(f_w)


def predict(f_w: torch.Tensor, f_s: torch.Tensor, params: ScoreRegressor) -> torch.Tensor:
    return params(f_w, f_s)
