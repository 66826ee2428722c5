"""Raster I/O shared by the dataset factory and the model harness."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError


def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit raster as float64 in [0, 1].

    Returns (H, W) for single-channel files and (H, W, 3) otherwise; alpha
    and palette images are converted to RGB.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                peak = 65535.0 if im.mode.startswith("I;16") or arr.max() > 255 else 255.0
                return np.clip(arr / peak, 0.0, 1.0)
            if im.mode == "F":
                return np.clip(np.asarray(im, dtype=np.float64), 0.0, 1.0)
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write a [0, 1] array as an 8-bit PNG."""
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def to_model_input(img: np.ndarray, resolution: int, dtype=torch.float32) -> torch.Tensor:
    """(3, R, R) tensor; grayscale is replicated across the three channels."""
    x = torch.as_tensor(np.ascontiguousarray(img), dtype=torch.float64)
    if x.dim() == 2:
        x = x.unsqueeze(-1).expand(-1, -1, 3)
    x = x.permute(2, 0, 1).contiguous()
    if x.shape[-2:] != (resolution, resolution):
        x = F.interpolate(x.unsqueeze(0), size=(resolution, resolution), mode="bilinear",
                          align_corners=False, antialias=True).squeeze(0).clamp(0.0, 1.0)
    return x.to(dtype)


def load_model_input(path, resolution: int, dtype=torch.float32) -> torch.Tensor:
    return to_model_input(load_image(path), resolution, dtype)
