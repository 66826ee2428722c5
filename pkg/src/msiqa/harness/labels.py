"""Synthetic quality labels for desk-scale runs without a rater study."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from ..dataset.distortions import psnr
from ..dataset.factory import PRISTINE_DIR
from ..dataset.imageio import load_image
from ..dataset.manifest import Manifest, SCORE_MAX, SCORE_MIN
from ..errors import ManifestError

MODES = ("recipe", "psnr")


def recipe_score(recipe) -> float:
    """4 at (1,1,1), 0 at (3,3,3), linear in the summed level."""
    return SCORE_MAX - (sum(recipe) - 3) / 6 * SCORE_MAX


def synth_labels(manifest: Manifest, mode: str = "recipe", pristine_dir=None) -> Manifest:
    """Fill in scores from the recipe levels or from PSNR against the pristine slice.

    In ``psnr`` mode scores are the min-max affine map of PSNR over the
    manifest onto [0, 4]; pristine images are looked up as
    ``{patient}_{slice}.png`` in ``pristine_dir`` (default: the dataset's
    ``pristine/`` folder).
    """
    if mode == "recipe":
        return manifest.with_entries(replace(e, score=recipe_score(e.recipe)) for e in manifest)
    if mode != "psnr":
        raise ValueError(f"mode must be one of {MODES}")

    pristine_dir = Path(pristine_dir) if pristine_dir is not None else manifest.root / PRISTINE_DIR
    cache, values = {}, []
    for e in manifest:
        key = (e.patient_id, e.slice_id)
        if key not in cache:
            ref = pristine_dir / f"{e.patient_id}_{e.slice_id}.png"
            if not ref.is_file():
                raise ManifestError(f"missing pristine reference {ref} for {e.path}")
            cache[key] = load_image(ref)
        values.append(min(psnr(load_image(manifest.resolve(e)), cache[key]), 100.0))
    lo, hi = min(values), max(values)
    span = hi - lo
    scores = [SCORE_MAX if span == 0 else SCORE_MIN + (v - lo) / span * (SCORE_MAX - SCORE_MIN) for v in values]
    return manifest.with_entries(replace(e, score=s) for e, s in zip(manifest, scores))
