"""Multi-scale feature fusion with adaptive graph channel attention (AGCA).

Per stage, residual and windowed features are concatenated along channels,
averaged over space, and reduced to a common width. Each descriptor goes
through its own AGCA block; the attended stage vectors are concatenated and
max-pooled into ``f_w``. The last windowed stage follows the same AGCA and
pooling route, without reduction, to give ``f_s``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import torch
import torch.nn as nn

from .errors import ShapeMismatchError


@dataclass
class FusionConfig:
    reduced_dim: int = 256
    pool_kernel: int = 2

    def __post_init__(self):
        if self.reduced_dim <= 0 or self.pool_kernel <= 0:
            raise ValueError("reduced_dim and pool_kernel must be positive")


@dataclass
class FusedVectors:
    f_w: torch.Tensor  # (B, n_stages * D / k)
    f_s: torch.Tensor  # (B, C_last / k)
    # intermediates kept for visualization
    stages: List[torch.Tensor]  # concatenated F_i maps
    F_W: torch.Tensor  # attended stage descriptors before pooling
    F_S: torch.Tensor  # attended last-stage descriptor before pooling


class AGCA(nn.Module):
    """Channel attention A = diag(sigmoid(transform(x))) + adjacency, applied as A @ x."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        # 1x1 conv on a 1x1 descriptor is a dense layer
        self.channel_transform = nn.Linear(dim, dim)
        # starts as pure self-attention
        self.adjacency = nn.Parameter(torch.zeros(dim, dim))

    def _check(self, f_in):
        if f_in.shape[-1] != self.dim:
            raise ShapeMismatchError(f"AGCA expects width {self.dim}, got {f_in.shape[-1]}")

    def gate(self, f_in: torch.Tensor) -> torch.Tensor:
        self._check(f_in)
        return torch.sigmoid(self.channel_transform(f_in))

    def attention_matrix(self, f_in: torch.Tensor) -> torch.Tensor:
        # identity @ (rows of f) keeps only the diagonal, so A0 x A1 == diag(f)
        return torch.diag_embed(self.gate(f_in)) + self.adjacency

    def forward(self, f_in: torch.Tensor) -> torch.Tensor:
        # A @ f_in without materialising the batch of D x D matrices
        return self.gate(f_in) * f_in + f_in @ self.adjacency.T


def agca_attention_matrix(f_in: torch.Tensor, params: AGCA) -> torch.Tensor:
    return params.attention_matrix(f_in)


def agca_apply(f_in: torch.Tensor, params: AGCA) -> torch.Tensor:
    return params(f_in)


def concat_stage(f_res: torch.Tensor, f_swin: torch.Tensor) -> torch.Tensor:
    """Channel concatenation; residual channels first."""
    if f_res.dim() != 4 or f_swin.dim() != 4:
        raise ShapeMismatchError("stage features must be rank-4 (B, C, H, W)")
    if f_res.shape[0] != f_swin.shape[0] or f_res.shape[2:] != f_swin.shape[2:]:
        raise ShapeMismatchError(f"cannot concatenate {tuple(f_res.shape)} with {tuple(f_swin.shape)}: "
                                 "batch and spatial dims must match")
    return torch.cat([f_res, f_swin], dim=1)


def channel_descriptor(stage: torch.Tensor, reduction: Optional[nn.Module] = None) -> torch.Tensor:
    """Global average over space followed by the width reduction (if any)."""
    pooled = stage.mean(dim=(2, 3))
    if reduction is None:
        return pooled
    in_features = getattr(reduction, "in_features", None)
    if in_features is not None and in_features != pooled.shape[1]:
        raise ShapeMismatchError(f"reduction expects {in_features} channels, stage has {pooled.shape[1]}")
    return reduction(pooled)


def maxpool_flat(v: torch.Tensor, kernel: int) -> torch.Tensor:
    """Non-overlapping 1-D max pooling over the last axis."""
    n = v.shape[-1]
    if n % kernel:
        raise ShapeMismatchError(f"pool kernel {kernel} does not divide vector length {n}")
    return v.reshape(*v.shape[:-1], n // kernel, kernel).amax(dim=-1)


def fused_stages(res_stages: Optional[Sequence[torch.Tensor]],
                 swin_stages: Optional[Sequence[torch.Tensor]]) -> List[torch.Tensor]:
    """F_i per stage; a disabled branch (None) simply drops out of the concatenation."""
    if res_stages is None and swin_stages is None:
        raise ValueError("at least one backbone must be enabled")
    if res_stages is None:
        return list(swin_stages)
    if swin_stages is None:
        return list(res_stages)
    if len(res_stages) != len(swin_stages):
        raise ShapeMismatchError("backbones returned different numbers of stages")
    return [concat_stage(r, s) for r, s in zip(res_stages, swin_stages)]


def _select(stages, stage_ids):
    if not stage_ids or min(stage_ids) < 1 or max(stage_ids) > len(stages):
        raise ShapeMismatchError(f"stage ids {tuple(stage_ids)} out of range for {len(stages)} stages")
    return [stages[i - 1] for i in stage_ids]


def fuse(res_stages: Optional[Sequence[torch.Tensor]], swin_stages: Optional[Sequence[torch.Tensor]],
         cfg: FusionConfig, agca_bank: Mapping[str, AGCA], reductions: Mapping[str, nn.Module],
         stage_ids: Sequence[int] = (1, 2, 3, 4)) -> FusedVectors:
    """Build ``f_w`` and ``f_s`` from aligned per-stage features.

    ``stage_ids`` (1-based) selects which stages feed ``f_w``; agca_bank and
    reductions are looked up as ``stage{i}``. The score path always reads the
    last windowed stage, or the last residual stage when that branch is off.
    """
    stages = _select(fused_stages(res_stages, swin_stages), stage_ids)
    attended = []
    for i, F in zip(stage_ids, stages):
        desc = channel_descriptor(F, reductions[f"stage{i}"])
        attended.append(agca_apply(desc, agca_bank[f"stage{i}"]))
    F_W = torch.cat(attended, dim=1)
    f_w = maxpool_flat(F_W, cfg.pool_kernel)

    last = (swin_stages if swin_stages is not None else res_stages)[-1]
    F_S = agca_apply(channel_descriptor(last), agca_bank["fs"])
    f_s = maxpool_flat(F_S, cfg.pool_kernel)
    return FusedVectors(f_w, f_s, stages, F_W, F_S)


def bypass(res_stages: Optional[Sequence[torch.Tensor]], swin_stages: Optional[Sequence[torch.Tensor]],
           cfg: FusionConfig, stage_ids: Sequence[int] = (1, 2, 3, 4)) -> FusedVectors:
    """Fusion module switched off: last-stage descriptors go straight to pooling.

    ``f_w`` comes from the deepest enabled concatenated stage and ``f_s`` from
    the last windowed (or residual) stage; no reduction, no attention.
    """
    stages = _select(fused_stages(res_stages, swin_stages), stage_ids)
    F_W = channel_descriptor(stages[-1])
    last = (swin_stages if swin_stages is not None else res_stages)[-1]
    F_S = channel_descriptor(last)
    return FusedVectors(maxpool_flat(F_W, cfg.pool_kernel), maxpool_flat(F_S, cfg.pool_kernel), stages, F_W, F_S)


def build_fusion_params(stage_widths: Sequence[int], last_width: int, cfg: FusionConfig,
                        stage_ids: Sequence[int] = (1, 2, 3, 4)) -> Dict[str, nn.ModuleDict]:
    """Reduction layers (C_i -> D) and the AGCA bank for the given stages."""
    if cfg.reduced_dim > min(stage_widths):
        raise ValueError(f"reduced_dim {cfg.reduced_dim} exceeds the narrowest fused stage {min(stage_widths)}")
    reductions = nn.ModuleDict({f"stage{i}": nn.Linear(c, cfg.reduced_dim) for i, c in zip(stage_ids, stage_widths)})
    agca = nn.ModuleDict({f"stage{i}": AGCA(cfg.reduced_dim) for i in stage_ids})
    agca["fs"] = AGCA(last_width)
    return {"reduce": reductions, "agca": agca}
