"""Checkpoint evaluation and single-image scoring.

Both routes score one image at a time through :func:`score_tensor`, so a
file gets the same value whichever entry point is used.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch

from ..dataset.imageio import load_model_input
from ..dataset.manifest import Manifest
from ..errors import ManifestError, UndefinedCorrelationError
from ..model import MSIQA, load_checkpoint
from ..objectives import plcc, srocc

CheckpointLike = Union[str, Path, MSIQA]
INJECT_MODES = ("truth", "negated")


def as_model(checkpoint: CheckpointLike) -> MSIQA:
    if isinstance(checkpoint, MSIQA):
        return checkpoint.eval()
    model, _ = load_checkpoint(checkpoint)
    return model


def _dtype(model):
    return next(model.parameters()).dtype


@torch.no_grad()
def score_tensor(model: MSIQA, x: torch.Tensor) -> float:
    return float(model(x.unsqueeze(0))[0])


def score_image(checkpoint: CheckpointLike, image_path) -> float:
    model = as_model(checkpoint)
    return score_tensor(model, load_model_input(image_path, model.cfg.input_resolution, _dtype(model)))


@dataclass
class EvalReport:
    srocc: float
    plcc: float
    n_images: int
    # (relative path, ground truth, prediction)
    predictions: List[Tuple[str, float, float]] = field(default_factory=list)

    def table(self) -> str:
        lines = [f"{'path':<48} {'target':>8} {'pred':>10}"]
        lines += [f"{p:<48} {t:>8.4f} {y:>10.4f}" for p, t, y in self.predictions]
        lines.append(f"n={self.n_images}  SROCC={self.srocc:.4f}  PLCC={self.plcc:.4f}")
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["path", "target", "prediction"])
            w.writerows((p, repr(t), repr(y)) for p, t, y in self.predictions)
            w.writerow(["#summary", f"srocc={self.srocc!r}", f"plcc={self.plcc!r}"])


def evaluate(checkpoint: CheckpointLike, manifest: Manifest, split: Optional[str] = "test",
             inject: Optional[str] = None) -> EvalReport:
    """Score every image in ``split`` (all entries when None) and correlate with the labels.

    ``inject`` replaces predictions by the ground truth ("truth") or its
    negation ("negated") to exercise the metric path without a model.
    """
    subset = manifest.split(split) if split else manifest
    if len(subset) == 0:
        raise ManifestError(f"split {split!r} is empty")
    if inject is not None and inject not in INJECT_MODES:
        raise ValueError(f"inject must be one of {INJECT_MODES}")
    for e in subset:
        if e.score is None:
            raise ManifestError(f"{e.path} has no ground-truth score")
        if not manifest.resolve(e).is_file():
            raise FileNotFoundError(f"missing image {manifest.resolve(e)}")

    targets = [e.score for e in subset]
    if inject == "truth":
        preds = list(targets)
    elif inject == "negated":
        preds = [-t for t in targets]
    else:
        model = as_model(checkpoint)
        dtype, res = _dtype(model), model.cfg.input_resolution
        preds = [score_tensor(model, load_model_input(manifest.resolve(e), res, dtype)) for e in subset]

    try:
        s, p = srocc(preds, targets), plcc(preds, targets)
    except UndefinedCorrelationError as exc:
        spread = f"predictions span [{min(preds):.6g}, {max(preds):.6g}], targets span [{min(targets):.6g}, {max(targets):.6g}]"
        raise UndefinedCorrelationError(f"{exc} ({spread}); the model may have collapsed to a constant") from exc
    rows = [(e.path, float(t), float(y)) for e, t, y in zip(subset, targets, preds)]
    return EvalReport(s, p, len(rows), rows)
