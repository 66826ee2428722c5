"""Build a distorted dataset (27 recipes per pristine slice) with its manifest."""
from __future__ import annotations

import hashlib
import re
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Tuple

from ..errors import ManifestError
from .distortions import DEFAULT_PARAMS, DistortionParams, DistortionRecipe, all_recipes, apply_recipe
from .imageio import load_image, save_image
from .manifest import Manifest, ManifestEntry, split_by_patient, write_manifest

_NAME = re.compile(r"^(?P<patient>.+)_(?P<slice>[^_]+)$")

MANIFEST_NAME = "manifest.csv"
PRISTINE_DIR = "pristine"
IMAGE_DIR = "images"


def image_seed(global_seed: int, patient: str, slice_id: str, recipe: DistortionRecipe) -> int:
    """Stable per-image seed; independent of generation order and process."""
    key = f"{global_seed}|{patient}|{slice_id}|{recipe.tag}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def scan_pristine(pristine_dir) -> List[Tuple[str, str, Path]]:
    pristine_dir = Path(pristine_dir)
    if not pristine_dir.is_dir():
        raise ManifestError(f"pristine directory not found: {pristine_dir}")
    found = []
    for path in sorted(pristine_dir.glob("*.png")):
        m = _NAME.match(path.stem)
        if not m:
            raise ManifestError(f"{path.name}: expected name of the form {{patient}}_{{slice}}.png")
        found.append((m["patient"], m["slice"], path))
    if not found:
        raise ManifestError(f"no pristine .png images in {pristine_dir}")
    return found


def build_dataset(pristine_dir, out_dir, seed: int = 0, params: DistortionParams = DEFAULT_PARAMS,
                  train_fraction: float = 0.8, workers: int = 1) -> Manifest:
    """Distort every pristine slice with all 27 recipes and write ``manifest.csv``.

    Pristine images are copied to ``out_dir/pristine`` (the reference for
    PSNR labelling); distorted ones go to ``out_dir/images``. Scores are left
    empty. Splits are patient-disjoint when there are at least two patients.
    """
    out_dir = Path(out_dir)
    sources = scan_pristine(pristine_dir)
    (out_dir / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    (out_dir / PRISTINE_DIR).mkdir(parents=True, exist_ok=True)

    def work(item):
        patient, slice_id, path = item
        img = load_image(path)
        shutil.copyfile(path, out_dir / PRISTINE_DIR / path.name)
        entries = []
        for recipe in all_recipes():
            rel = f"{IMAGE_DIR}/{path.stem}_{recipe.tag}.png"
            save_image(apply_recipe(img, recipe, image_seed(seed, patient, slice_id, recipe), params), out_dir / rel)
            entries.append(ManifestEntry(rel, patient, slice_id, recipe))
        return entries

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(work, sources))
    else:
        chunks = [work(item) for item in sources]
    manifest = Manifest([e for chunk in chunks for e in chunk], out_dir)
    if len(manifest.patients()) >= 2:
        manifest = split_by_patient(manifest, train_fraction, seed)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest
