"""Mixed-distortion synthesis: Poisson noise, Gaussian noise, JPEG compression.

Each family has three severity levels. Images are float arrays in [0, 1],
either (H, W) or (H, W, 3).
"""
from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterator, NamedTuple, Optional, Union

import numpy as np
from PIL import Image

from .imageio import to_uint8

SeedLike = Union[None, int, np.random.Generator]

LEVELS = (1, 2, 3)


@dataclass(frozen=True)
class DistortionParams:
    # photon budget per unit intensity; fewer counts -> more shot noise
    poisson_peaks: Dict[int, float] = field(default_factory=lambda: {1: 120.0, 2: 60.0, 3: 30.0})
    gaussian_sigmas: Dict[int, float] = field(default_factory=lambda: {1: 0.02, 2: 0.06, 3: 0.10})
    jpeg_qualities: Dict[int, int] = field(default_factory=lambda: {1: 60, 2: 30, 3: 10})


DEFAULT_PARAMS = DistortionParams()


class DistortionRecipe(NamedTuple):
    poisson: int
    gaussian: int
    jpeg: int

    def validate(self) -> "DistortionRecipe":
        for name, level in zip(self._fields, self):
            _check_level(level, name)
        return self

    @property
    def tag(self) -> str:
        return f"p{self.poisson}g{self.gaussian}j{self.jpeg}"


def all_recipes() -> Iterator[DistortionRecipe]:
    """The 27 (poisson, gaussian, jpeg) level triples in lexicographic order."""
    for p, g, j in itertools.product(LEVELS, repeat=3):
        yield DistortionRecipe(p, g, j)


def _check_level(level, family):
    if level not in LEVELS or isinstance(level, bool):
        raise ValueError(f"{family} level must be one of {LEVELS}, got {level!r}")


def apply_poisson(img: np.ndarray, level: int, seed: SeedLike = None,
                  params: DistortionParams = DEFAULT_PARAMS) -> np.ndarray:
    _check_level(level, "poisson")
    rng = np.random.default_rng(seed)
    peak = params.poisson_peaks[level]
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.clip(rng.poisson(img * peak) / peak, 0.0, 1.0)


def apply_gaussian(img: np.ndarray, level: int, seed: SeedLike = None,
                   params: DistortionParams = DEFAULT_PARAMS) -> np.ndarray:
    _check_level(level, "gaussian")
    rng = np.random.default_rng(seed)
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img + rng.normal(0.0, params.gaussian_sigmas[level], size=img.shape), 0.0, 1.0)


def apply_jpeg(img: np.ndarray, level: int, params: DistortionParams = DEFAULT_PARAMS) -> np.ndarray:
    """Encode/decode round trip at the level's JPEG quality; output is 8-bit quantized."""
    _check_level(level, "jpeg")
    buf = io.BytesIO()
    try:
        Image.fromarray(to_uint8(img)).save(buf, format="JPEG", quality=int(params.jpeg_qualities[level]))
        buf.seek(0)
        with Image.open(buf) as im:
            out = np.asarray(im, dtype=np.float64) / 255.0
    except OSError as exc:
        raise RuntimeError(f"JPEG codec failure: {exc}") from exc
    return out


def apply_recipe(img: np.ndarray, recipe, seed: SeedLike = None,
                 params: DistortionParams = DEFAULT_PARAMS) -> np.ndarray:
    """Poisson, then Gaussian, then JPEG: acquisition noise precedes transmission."""
    recipe = DistortionRecipe(*recipe).validate()
    rng = np.random.default_rng(seed)
    out = apply_poisson(img, recipe.poisson, rng, params)
    out = apply_gaussian(out, recipe.gaussian, rng, params)
    return apply_jpeg(out, recipe.jpeg, params)


def psnr(img: np.ndarray, ref: np.ndarray, data_range: float = 1.0) -> float:
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    mse = np.mean((img - ref) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))
