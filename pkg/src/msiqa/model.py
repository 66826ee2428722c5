"""The full network: backbones -> fusion -> score head, plus checkpoint I/O."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import torch
import torch.nn as nn

from .backbones import BackboneSpec, build_backbone, read_tensor_file
from .errors import ParameterMismatchError
from .fusion import FusedVectors, FusionConfig, build_fusion_params, bypass, fuse
from .regressor import ScoreRegressor


@dataclass
class ModelConfig:
    residual: BackboneSpec = field(default_factory=lambda: BackboneSpec("residual50"))
    windowed: BackboneSpec = field(default_factory=lambda: BackboneSpec("windowed_tiny"))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    input_resolution: int = 224
    hidden: int = 128
    leaky_slope: float = 0.01
    # ablation switches
    use_rm: bool = True
    use_stm: bool = True
    use_msffm: bool = True
    use_srm_weight_branch: bool = True
    stages_enabled: Tuple[int, ...] = (1, 2, 3, 4)
    freeze_backbones: bool = False

    def __post_init__(self):
        if isinstance(self.residual, dict):
            self.residual = BackboneSpec(**self.residual)
        if isinstance(self.windowed, dict):
            self.windowed = BackboneSpec(**self.windowed)
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        self.stages_enabled = tuple(sorted(int(s) for s in self.stages_enabled))
        if not (self.use_rm or self.use_stm):
            raise ValueError("at least one backbone must be enabled")
        if not self.stages_enabled or self.stages_enabled != tuple(range(1, len(self.stages_enabled) + 1)) \
                or len(self.stages_enabled) > 4:
            raise ValueError(f"stages_enabled must be contiguous from 1, got {self.stages_enabled}")
        if self.input_resolution <= 0 or self.input_resolution % 32:
            raise ValueError("input_resolution must be a positive multiple of 32")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(residual=BackboneSpec("toy_residual"), windowed=BackboneSpec("toy_windowed"),
                    fusion=FusionConfig(reduced_dim=8, pool_kernel=2), input_resolution=64, hidden=16)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class MSIQA(nn.Module):
    """Multi-scale no-reference quality model.

    Parameter names: ``residual.*`` / ``windowed.*`` for the backbones,
    ``reduce.stage{i}.*`` for the 1x1 reductions, ``agca.stage{i}.*`` and
    ``agca.fs.*`` for the attention blocks, ``regressor.score.*`` and
    ``regressor.weight.*`` for the head.
    """

    def __init__(self, cfg: ModelConfig, load_backbone_checkpoints: bool = True):
        super().__init__()
        self.cfg = cfg
        self.residual = build_backbone(cfg.residual, load_backbone_checkpoints) if cfg.use_rm else None
        self.windowed = build_backbone(cfg.windowed, load_backbone_checkpoints) if cfg.use_stm else None
        if cfg.freeze_backbones:
            for net in (self.residual, self.windowed):
                if net is not None:
                    net.requires_grad_(False)

        stage_widths = [(cfg.residual.stage_channels[i - 1] if cfg.use_rm else 0) +
                        (cfg.windowed.stage_channels[i - 1] if cfg.use_stm else 0) for i in cfg.stages_enabled]
        last_width = (cfg.windowed if cfg.use_stm else cfg.residual).stage_channels[3]
        fc = cfg.fusion
        if cfg.use_msffm and fc.reduced_dim > min(stage_widths):
            # a single-backbone ablation can leave a stage narrower than D
            warnings.warn(f"reduced_dim {fc.reduced_dim} exceeds the narrowest fused stage; "
                          f"using {min(stage_widths)}", stacklevel=2)
            fc = replace(fc, reduced_dim=min(stage_widths))
        self.fusion_cfg = fc
        if cfg.use_msffm:
            parts = build_fusion_params(stage_widths, last_width, fc, cfg.stages_enabled)
            self.reduce, self.agca = parts["reduce"], parts["agca"]
            fw_dim = len(cfg.stages_enabled) * fc.reduced_dim
        else:
            self.reduce = self.agca = None
            fw_dim = stage_widths[-1]
        for width in (fw_dim, last_width):
            if width % fc.pool_kernel:
                raise ValueError(f"pool_kernel {fc.pool_kernel} does not divide vector width {width}")
        self.fw_dim, self.fs_dim = fw_dim // fc.pool_kernel, last_width // fc.pool_kernel
        self.regressor = ScoreRegressor(self.fs_dim, self.fw_dim, cfg.hidden, cfg.leaky_slope,
                                        use_weight_branch=cfg.use_srm_weight_branch)

    def backbone_stages(self, img):
        res = self.residual(img) if self.residual is not None else None
        swin = self.windowed(img) if self.windowed is not None else None
        return res, swin

    def features(self, img: torch.Tensor) -> FusedVectors:
        res, swin = self.backbone_stages(img)
        if self.cfg.use_msffm:
            return fuse(res, swin, self.fusion_cfg, self.agca, self.reduce, self.cfg.stages_enabled)
        return bypass(res, swin, self.fusion_cfg, self.cfg.stages_enabled)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        fv = self.features(img)
        return self.regressor(fv.f_w, fv.f_s)


def save_checkpoint(model: MSIQA, path, extra: Optional[dict] = None) -> None:
    """Write all parameters and buffers plus a JSON config snapshot (safetensors)."""
    from safetensors.torch import save_file

    meta = {"model_config": json.dumps(model.cfg.to_dict())}
    for k, v in (extra or {}).items():
        meta[k] = v if isinstance(v, str) else json.dumps(v)
    state = {k: v.detach().contiguous().clone() for k, v in model.state_dict().items()}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_file(state, str(path), metadata=meta)


def load_checkpoint(path) -> Tuple[MSIQA, dict]:
    """Rebuild the model described by the checkpoint and load it bit-exact."""
    tensors, meta = read_tensor_file(path)
    if "model_config" not in meta:
        raise ParameterMismatchError(f"{path} has no model_config metadata; not a model checkpoint")
    cfg = ModelConfig.from_dict(json.loads(meta["model_config"]))
    model = MSIQA(cfg, load_backbone_checkpoints=False)
    dtype = next(iter(tensors.values())).dtype if tensors else torch.float32
    if dtype.is_floating_point:
        model.to(dtype)
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as exc:
        raise ParameterMismatchError(str(exc)) from exc
    model.eval()
    return model, meta
