"""Adam training loop over a manifest split."""
from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from ..dataset.imageio import load_model_input
from ..dataset.manifest import Manifest
from ..errors import ManifestError, UndefinedCorrelationError
from ..model import MSIQA, save_checkpoint
from ..objectives import LossConfig, mse_loss, plcc, ranking_loss, srocc
from .config import TrainConfig

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.safetensors"
LOG_NAME = "train_log.csv"


class ManifestImages(Dataset):
    """(image tensor, score) pairs for one split; decoded images are cached in memory."""

    def __init__(self, manifest: Manifest, resolution: int, dtype=torch.float32, cache: bool = True):
        self.manifest = manifest
        self.entries = list(manifest)
        self.resolution = resolution
        self.dtype = dtype
        self._cache = {} if cache else None
        for e in self.entries:
            if e.score is None:
                raise ManifestError(f"{e.path} has no score; label the manifest first")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, idx):
        e = self.entries[idx]
        if self._cache is not None and idx in self._cache:
            x = self._cache[idx]
        else:
            x = load_model_input(self.manifest.resolve(e), self.resolution, self.dtype)
            if self._cache is not None:
                self._cache[idx] = x
        return x, torch.tensor(e.score, dtype=self.dtype)


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)
    if torch.backends.cudnn.is_available():
        torch.backends.cudnn.benchmark = not deterministic


def objective(y: torch.Tensor, t: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Weighted MSE + ranking loss; a single-sample batch can only carry the MSE term."""
    loss = cfg.lambda1 * mse_loss(y, t)
    if y.numel() >= 2:
        loss = loss + cfg.lambda2 * ranking_loss(y, t, cfg)
    elif cfg.lambda2 != 0:
        raise ValueError("ranking loss needs at least 2 samples per batch")
    return loss


@torch.no_grad()
def predict_batches(model: MSIQA, loader) -> tuple:
    was_training = model.training
    model.eval()
    ys, ts = [], []
    for x, t in loader:
        ys.append(model(x))
        ts.append(t)
    model.train(was_training)
    return torch.cat(ys), torch.cat(ts)


def _metrics(y, t):
    try:
        return srocc(y, t), plcc(y, t)
    except UndefinedCorrelationError:
        return math.nan, math.nan


@dataclass
class TrainResult:
    model: MSIQA
    log: List[dict] = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    steps: int = 0
    checkpoint: Optional[Path] = None


def train(cfg: TrainConfig, manifest: Manifest, out_dir=None, eval_split: Optional[str] = "test") -> TrainResult:
    """Minimise the weighted MSE + ranking objective with Adam on the train split.

    ``initial_loss`` / ``final_loss`` are the full train-split objective in
    eval mode before the first and after the last step. Each epoch logs the
    mean batch loss and, when ``eval_split`` has images, its SROCC/PLCC.
    With ``out_dir`` the checkpoint and a CSV log are written there.
    """
    train_set = manifest.split("train")
    if len(train_set) == 0:
        raise ManifestError("manifest has no 'train' entries")
    dtype = getattr(torch, cfg.dtype)
    seed_everything(cfg.seed, cfg.deterministic)

    model = MSIQA(cfg.model).to(dtype)
    res = cfg.model.input_resolution
    data = ManifestImages(train_set, res, dtype)
    bs = min(cfg.batch_size, len(data))
    gen = torch.Generator().manual_seed(cfg.seed)
    # a trailing batch of one would make the ranking term undefined
    drop_last = len(data) > 1 and len(data) % bs == 1
    loader = DataLoader(data, batch_size=bs, shuffle=True, generator=gen, drop_last=drop_last,
                        num_workers=cfg.workers)
    full = DataLoader(data, batch_size=bs, shuffle=False, num_workers=cfg.workers)
    eval_loader = None
    if eval_split and len(manifest.split(eval_split)):
        eval_loader = DataLoader(ManifestImages(manifest.split(eval_split), res, dtype), batch_size=bs,
                                 shuffle=False, num_workers=cfg.workers)

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    result = TrainResult(model)
    result.initial_loss = float(objective(*predict_batches(model, full), cfg.loss))
    log.info("initial train loss %.6g", result.initial_loss)

    steps = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        losses = []
        for x, t in loader:
            loss = objective(model(x), t, cfg.loss)
            opt.zero_grad(set_to_none=False)
            loss.backward()
            opt.step()
            losses.append(loss.item())
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        row = {"epoch": epoch, "steps": steps, "train_loss": float(np.mean(losses))}
        if eval_loader is not None:
            row[f"{eval_split}_srocc"], row[f"{eval_split}_plcc"] = _metrics(*predict_batches(model, eval_loader))
        result.log.append(row)
        log.info("epoch %d: %s", epoch, row)
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break

    model.eval()
    result.steps = steps
    result.final_loss = float(objective(*predict_batches(model, full), cfg.loss))
    log.info("final train loss %.6g after %d steps", result.final_loss, steps)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out_dir / CHECKPOINT_NAME
        save_checkpoint(model, result.checkpoint,
                        extra={"train_config": cfg.to_dict(), "final_loss": repr(result.final_loss),
                               "steps": str(steps)})
        write_log(result.log, out_dir / LOG_NAME)
    return result


def write_log(rows: List[dict], path) -> None:
    if not rows:
        return
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
