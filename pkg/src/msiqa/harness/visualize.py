"""Feature-map rendering: fused stages as heatmaps, fused vectors as strips."""
from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib import colormaps
from PIL import Image

from ..dataset.imageio import load_model_input
from ..fusion import fused_stages
from .evaluate import CheckpointLike, as_model

STAGE_FILES = ("F1.png", "F2.png", "F3.png", "F4.png")
VECTOR_FILES = ("FW.png", "FS.png")
STRIP_HEIGHT = 32
# spreads below this fraction of the magnitude are rounding noise, drawn flat
FLAT_TOL = 1e-5


def _colorize(values: np.ndarray, cmap: str = "viridis") -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    flat = hi - lo <= FLAT_TOL * max(abs(lo), abs(hi))
    norm = np.zeros_like(values) if flat else (values - lo) / (hi - lo)
    return (colormaps[cmap](norm)[..., :3] * 255).round().astype(np.uint8)


def stage_heatmap(stage: torch.Tensor, size: int) -> np.ndarray:
    """Channel mean of a (C, H, W) map, bilinearly upsampled to size x size."""
    m = stage.mean(dim=0, keepdim=True).unsqueeze(0).double()
    return F.interpolate(m, size=(size, size), mode="bilinear", align_corners=False)[0, 0].numpy()


def vector_strip(vec: torch.Tensor, height: int = STRIP_HEIGHT) -> np.ndarray:
    return np.repeat(vec.double().numpy()[None, :], height, axis=0)


@torch.no_grad()
def export_feature_maps(checkpoint: CheckpointLike, image_path, out_dir) -> List[Path]:
    """Write F1..F4 heatmaps at input resolution plus FW / FS strip images."""
    model = as_model(checkpoint)
    res = model.cfg.input_resolution
    x = load_model_input(image_path, res, next(model.parameters()).dtype)
    fv = model.features(x.unsqueeze(0))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # all four stages, even those a stage ablation keeps out of f_w
    stages = fused_stages(*model.backbone_stages(x.unsqueeze(0)))
    rasters = [stage_heatmap(s[0], res) for s in stages] + [vector_strip(fv.F_W[0]), vector_strip(fv.F_S[0])]
    paths = []
    for name, arr in zip(STAGE_FILES + VECTOR_FILES, rasters):
        path = out_dir / name
        Image.fromarray(_colorize(arr)).save(path)
        paths.append(path)
    return paths
