"""Dual-branch multi-scale feature extractors.

Two families are provided: a residual convolutional network and a
shifted-window attention network. Each returns four channel-first feature
maps at strides 4, 8, 16 and 32 of the input. The full-size variants wrap
torchvision's ResNet-50 and Swin-T so that their published state dicts load
without key remapping; the toy variants keep the same spatial contract at a
fraction of the cost.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from torchvision.models import resnet50
from torchvision.models.swin_transformer import (ShiftedWindowAttention, SwinTransformer, SwinTransformerBlock,
                                                shifted_window_attention, swin_t)

from .errors import ParameterMismatchError, ShapeMismatchError

KINDS = ("residual50", "windowed_tiny", "toy_residual", "toy_windowed")

DEFAULT_STAGE_CHANNELS = {
    "residual50": (256, 512, 1024, 2048),
    "windowed_tiny": (96, 192, 384, 768),
    "toy_residual": (8, 16, 32, 64),
    "toy_windowed": (4, 8, 16, 32),
}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# buffers that carry input normalization; absent from third-party checkpoints
_NORM_BUFFERS = ("input_mean", "input_std")


@dataclass(frozen=True)
class BackboneSpec:
    kind: str
    stage_channels: Tuple[int, int, int, int] = field(default=())
    checkpoint_path: Optional[str] = None
    window_size: int = 4  # toy_windowed only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}; expected one of {KINDS}")
        channels = tuple(int(c) for c in (self.stage_channels or DEFAULT_STAGE_CHANNELS[self.kind]))
        object.__setattr__(self, "stage_channels", channels)
        if len(channels) != 4 or any(c <= 0 for c in channels):
            raise ValueError(f"stage_channels must be 4 positive integers, got {channels}")
        if self.kind in ("residual50", "windowed_tiny") and channels != DEFAULT_STAGE_CHANNELS[self.kind]:
            raise ValueError(f"{self.kind} has fixed stage channels {DEFAULT_STAGE_CHANNELS[self.kind]}")
        if self.kind == "toy_windowed":
            c1 = channels[0]
            if channels != (c1, 2 * c1, 4 * c1, 8 * c1):
                raise ValueError("toy_windowed stage channels must double per stage")

    @property
    def is_toy(self) -> bool:
        return self.kind.startswith("toy_")


def check_input(img: torch.Tensor) -> None:
    if img.dim() != 4 or img.shape[1] != 3:
        raise ShapeMismatchError(f"expected (batch, 3, H, W) input, got {tuple(img.shape)}")
    h, w = img.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeMismatchError(f"input size {h}x{w} is not divisible by 32")


def token_grid_to_channel_first(tokens: torch.Tensor, height: Optional[int] = None,
                                width: Optional[int] = None) -> torch.Tensor:
    """Re-lay a (B, H*W, C) token sequence as a (B, C, H, W) map.

    Token ``h * W + w`` lands at spatial position ``(h, w)``. When the grid
    size is not given the token count must be a perfect square.
    """
    if tokens.dim() != 3:
        raise ShapeMismatchError(f"expected rank-3 tokens, got shape {tuple(tokens.shape)}")
    b, n, c = tokens.shape
    if height is None and width is None:
        side = math.isqrt(n)
        if side * side != n:
            raise ShapeMismatchError(f"token count {n} is not a perfect square")
        height = width = side
    elif height is None or width is None:
        raise ValueError("give both height and width or neither")
    if height * width != n:
        raise ShapeMismatchError(f"{height}x{width} grid does not match {n} tokens")
    return tokens.transpose(1, 2).reshape(b, c, height, width)


def channel_first_to_tokens(x: torch.Tensor) -> torch.Tensor:
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(1, 2)


class _Backbone(nn.Module):
    """Common input handling: 3-channel check and per-channel normalization."""

    def __init__(self, spec: BackboneSpec, mean: Sequence[float], std: Sequence[float]):
        super().__init__()
        self.spec = spec
        self.register_buffer("input_mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(std).view(1, 3, 1, 1))

    @property
    def stage_channels(self) -> Tuple[int, ...]:
        return self.spec.stage_channels

    def normalize(self, img: torch.Tensor) -> torch.Tensor:
        check_input(img)
        return (img - self.input_mean) / self.input_std

    def stages(self, x: torch.Tensor) -> List[torch.Tensor]:
        raise NotImplementedError

    def forward(self, img: torch.Tensor) -> List[torch.Tensor]:
        return self.stages(self.normalize(img))


class ResidualBackbone(_Backbone):
    """ResNet-50 truncated after layer4; parameter names follow torchvision."""

    def __init__(self, spec: BackboneSpec):
        super().__init__(spec, IMAGENET_MEAN, IMAGENET_STD)
        net = resnet50()
        self.conv1, self.bn1, self.relu, self.maxpool = net.conv1, net.bn1, net.relu, net.maxpool
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4

    def stages(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        outs = []
        for layer in (self.layer1, self.layer2, self.layer3, self.layer4):
            x = layer(x)
            outs.append(x)
        return outs


class _FittedWindowAttention(ShiftedWindowAttention):
    """Window attention whose window shrinks to the feature grid when the grid is smaller.

    Without this, a grid smaller than the window is zero-padded and the pad
    tokens take part in attention. The bias for the smaller window is read
    from the same relative-position table.
    """

    def forward(self, x):
        wh, ww = min(self.window_size[0], x.shape[1]), min(self.window_size[1], x.shape[2])
        if (wh, ww) == tuple(self.window_size):
            return super().forward(x)
        full_w = self.window_size[1]
        coords = torch.stack(torch.meshgrid(torch.arange(wh), torch.arange(ww), indexing="ij")).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :]
        index = (rel[0] + self.window_size[0] - 1) * (2 * full_w - 1) + rel[1] + full_w - 1
        n = wh * ww
        bias = self.relative_position_bias_table[index.flatten().to(x.device)].view(n, n, -1)
        bias = bias.permute(2, 0, 1).contiguous().unsqueeze(0)
        return shifted_window_attention(x, self.qkv.weight, self.proj.weight, bias, [wh, ww], self.num_heads,
                                        shift_size=[0, 0], attention_dropout=self.attention_dropout,
                                        dropout=self.dropout, qkv_bias=self.qkv.bias, proj_bias=self.proj.bias,
                                        training=self.training)


class WindowedBackbone(_Backbone):
    """Swin transformer returning the output of each of its four stages.

    ``features`` keeps torchvision's layout: even indices are patch
    embedding / merging layers, odd indices are the attention stages.
    """

    def __init__(self, spec: BackboneSpec):
        if spec.kind == "windowed_tiny":
            super().__init__(spec, IMAGENET_MEAN, IMAGENET_STD)
            net = swin_t()
        else:
            super().__init__(spec, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
            c1 = spec.stage_channels[0]
            heads = [max(1, c // 8) for c in spec.stage_channels]
            net = SwinTransformer(patch_size=[4, 4], embed_dim=c1, depths=[2, 2, 2, 2], num_heads=heads,
                                  window_size=[spec.window_size] * 2, stochastic_depth_prob=0.0,
                                  block=functools.partial(SwinTransformerBlock, attn_layer=_FittedWindowAttention))
        self.features = net.features

    def stages(self, x):
        outs = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i % 2 == 1:
                b, h, w, c = x.shape
                outs.append(token_grid_to_channel_first(x.reshape(b, h * w, c), h, w))
        return outs


class _ToyBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.norm1 = nn.GroupNorm(1, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.norm2 = nn.GroupNorm(1, cout)
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.GroupNorm(1, cout))

    def forward(self, x):
        out = torch.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return torch.relu(out + self.shortcut(x))


class ToyResidualBackbone(_Backbone):
    """One residual block per stage behind a stride-4 stem."""

    def __init__(self, spec: BackboneSpec):
        super().__init__(spec, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        c = spec.stage_channels
        stem = max(1, c[0] // 2)
        self.stem = nn.Sequential(nn.Conv2d(3, stem, 3, 2, 1, bias=False), nn.GroupNorm(1, stem), nn.ReLU(),
                                  nn.MaxPool2d(2))
        self.layers = nn.ModuleList([_ToyBlock(stem, c[0], 1), _ToyBlock(c[0], c[1], 2),
                                     _ToyBlock(c[1], c[2], 2), _ToyBlock(c[2], c[3], 2)])
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def stages(self, x):
        x = self.stem(x)
        outs = []
        for layer in self.layers:
            x = layer(x)
            outs.append(x)
        return outs


_BUILDERS = {
    "residual50": ResidualBackbone,
    "windowed_tiny": WindowedBackbone,
    "toy_residual": ToyResidualBackbone,
    "toy_windowed": WindowedBackbone,
}


def build_backbone(spec: BackboneSpec, load_checkpoint: bool = True) -> _Backbone:
    """Instantiate ``spec``, loading ``spec.checkpoint_path`` when set."""
    net = _BUILDERS[spec.kind](spec)
    if load_checkpoint and spec.checkpoint_path:
        weights = load_backbone_weights(spec, spec.checkpoint_path)
        net.load_state_dict(weights.params, strict=False)
    return net


@functools.lru_cache(maxsize=8)
def _skeleton(spec: BackboneSpec) -> _Backbone:
    return build_backbone(spec, load_checkpoint=False).eval()


def _check_params(reference: Dict[str, torch.Tensor], params: Dict[str, torch.Tensor]) -> Tuple[list, list]:
    missing = [k for k in reference if k not in params and k.rsplit(".", 1)[-1] not in _NORM_BUFFERS]
    unexpected = [k for k in params if k not in reference]
    bad = [f"{k}: expected {tuple(reference[k].shape)}, got {tuple(params[k].shape)}"
           for k in params if k in reference and params[k].shape != reference[k].shape]
    if bad:
        raise ParameterMismatchError("shape mismatch for " + "; ".join(bad[:5]) +
                                     (f" (+{len(bad) - 5} more)" if len(bad) > 5 else ""))
    return missing, unexpected


def extract_stages(img: torch.Tensor, spec: BackboneSpec, params: Dict[str, torch.Tensor]) -> List[torch.Tensor]:
    """Run the ``spec`` architecture with an explicit parameter set (eval mode)."""
    check_input(img)
    net = _skeleton(spec)
    missing, unexpected = _check_params(net.state_dict(), params)
    if missing or unexpected:
        raise ParameterMismatchError(f"parameter set does not match {spec.kind}: "
                                     f"missing={missing[:5]}, unexpected={unexpected[:5]}")
    return torch.func.functional_call(net, params, (img,), strict=False)


@dataclass
class BackboneWeights:
    params: Dict[str, torch.Tensor]
    missing_keys: List[str]
    unexpected_keys: List[str]


def read_tensor_file(path) -> Tuple[Dict[str, torch.Tensor], Dict[str, str]]:
    """Read a safetensors file (or, failing that, a torch pickle of tensors)."""
    from safetensors import SafetensorError
    from safetensors.torch import load_file, safe_open

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with safe_open(str(path), framework="pt") as f:
            meta = f.metadata() or {}
        return load_file(str(path)), meta
    except (SafetensorError, OSError, ValueError) as exc:
        try:
            obj = torch.load(path, map_location="cpu", weights_only=True)
        except Exception:
            raise OSError(f"unreadable checkpoint {path}: {exc}") from exc
    if isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    if not isinstance(obj, dict) or not all(isinstance(v, torch.Tensor) for v in obj.values()):
        raise OSError(f"{path} does not hold a flat tensor mapping")
    return dict(obj), {}


def load_backbone_weights(spec: BackboneSpec, path) -> BackboneWeights:
    """Load backbone parameters from ``path`` and validate them against ``spec``.

    Tensors absent from the architecture are dropped and reported via a
    warning; tensors with the wrong shape raise ``ParameterMismatchError``.
    """
    tensors, _ = read_tensor_file(path)
    reference = _skeleton(spec).state_dict()
    missing, unexpected = _check_params(reference, tensors)
    if not any(k in reference for k in tensors if k not in _NORM_BUFFERS):
        raise ParameterMismatchError(f"shape mismatch: {path} shares no tensors with a {spec.kind} backbone "
                                     f"(e.g. checkpoint has {unexpected[:3]})")
    if unexpected:
        shown = unexpected if len(unexpected) <= 10 else unexpected[:10] + ["..."]
        warnings.warn(f"ignoring {len(unexpected)} unused tensor(s) in {path}: {shown}", stacklevel=2)
    params = {k: v for k, v in tensors.items() if k in reference}
    return BackboneWeights(params, missing, unexpected)


def save_backbone_weights(params: Dict[str, torch.Tensor], path, spec: Optional[BackboneSpec] = None) -> None:
    from safetensors.torch import save_file

    meta = {}
    if spec is not None:
        meta = {"kind": spec.kind, "stage_channels": ",".join(map(str, spec.stage_channels))}
    save_file({k: v.detach().contiguous() for k, v in params.items()}, str(path), metadata=meta)
