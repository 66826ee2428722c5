"""Dataset manifest: CSV index of distorted images, patients, recipes, scores and splits."""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import fmean
from typing import Dict, Iterable, List, Optional, Sequence

from ..errors import ManifestError
from .distortions import DistortionRecipe

HEADER = ["path", "patient_id", "slice_id", "poisson", "gaussian", "jpeg", "score", "split"]
SPLITS = ("train", "test")
SCORE_MIN, SCORE_MAX = 0.0, 4.0


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest's directory
    patient_id: str
    slice_id: str
    recipe: DistortionRecipe
    score: Optional[float] = None
    split: Optional[str] = None

    def __post_init__(self):
        if self.score is not None and not (SCORE_MIN <= self.score <= SCORE_MAX):
            raise ManifestError(f"{self.path}: score {self.score} outside [{SCORE_MIN}, {SCORE_MAX}]")
        if self.split is not None and self.split not in SPLITS:
            raise ManifestError(f"{self.path}: unknown split {self.split!r}")


class Manifest:
    def __init__(self, entries: Iterable[ManifestEntry], root=None):
        self.entries: List[ManifestEntry] = list(entries)
        self.root = Path(root) if root is not None else Path(".")
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ManifestError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, Manifest) and self.entries == other.entries

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def split(self, name: str) -> "Manifest":
        return Manifest([e for e in self.entries if e.split == name], self.root)

    def patients(self, split: Optional[str] = None) -> set:
        return {e.patient_id for e in self.entries if split is None or e.split == split}

    def with_entries(self, entries) -> "Manifest":
        return Manifest(entries, self.root)


def _fmt_score(score):
    return "" if score is None else repr(float(score))


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HEADER)
        for e in manifest:
            w.writerow([e.path, e.patient_id, e.slice_id, *e.recipe, _fmt_score(e.score), e.split or ""])


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot open manifest {path}: {exc}") from exc
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames != HEADER:
            raise ManifestError(f"{path}: expected header {','.join(HEADER)}, got {reader.fieldnames}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            try:
                recipe = DistortionRecipe(int(row["poisson"]), int(row["gaussian"]), int(row["jpeg"])).validate()
                score = float(row["score"]) if row["score"] else None
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            entries.append(ManifestEntry(row["path"], row["patient_id"], row["slice_id"], recipe, score,
                                         row["split"] or None))
    return Manifest(entries, path.parent)


def aggregate_scores(scores: Sequence[float]) -> float:
    """Final score of one image: the mean over raters."""
    if len(scores) == 0:
        raise ValueError("no rater scores given")
    return fmean(scores)


def read_rater_scores(path) -> Dict[str, List[int]]:
    """Read ``path,r1,...,rk`` rows; every rating must be an integer 0..4."""
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "path" or len(header) < 2:
            raise ManifestError(f"{path}: expected header path,r1,r2,...")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ratings = [int(v) for v in row[1:] if v != ""]
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if not ratings or any(r < 0 or r > 4 for r in ratings):
                raise ManifestError(f"{path}:{lineno}: ratings must be integers in 0..4")
            out[row[0]] = ratings
    return out


def apply_rater_scores(manifest: Manifest, raters: Dict[str, Sequence[int]]) -> Manifest:
    missing = [e.path for e in manifest if e.path not in raters]
    if missing:
        raise ManifestError(f"{len(missing)} manifest entries have no ratings, e.g. {missing[:3]}")
    return manifest.with_entries(replace(e, score=aggregate_scores(raters[e.path])) for e in manifest)


def split_by_patient(manifest: Manifest, train_fraction: float = 0.8, seed: int = 0) -> Manifest:
    """Assign whole patients to train/test; train gets floor(fraction * n) patients.

    Both splits keep at least one patient.
    """
    patients = sorted(manifest.patients())
    if len(patients) < 2:
        raise ManifestError("patient-disjoint split needs at least 2 patients")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    random.Random(seed).shuffle(patients)
    n_train = min(max(math.floor(train_fraction * len(patients)), 1), len(patients) - 1)
    train = set(patients[:n_train])
    return manifest.with_entries(replace(e, split="train" if e.patient_id in train else "test") for e in manifest)
