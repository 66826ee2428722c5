import random
import sys
from dataclasses import replace
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from msiqa.dataset import build_dataset  # noqa: E402
from msiqa.dataset.phantoms import write_phantom_set  # noqa: E402
from msiqa.harness.labels import synth_labels  # noqa: E402


@pytest.fixture(autouse=True)
def _restore_determinism_flag():
    yield
    torch.use_deterministic_algorithms(False)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4 patients x 1 phantom slice at 64x64 -> 108 recipe-labelled images."""
    root = tmp_path_factory.mktemp("ds")
    write_phantom_set(root / "pristine_src", n_patients=4, n_slices=1, size=64, seed=0)
    manifest = build_dataset(root / "pristine_src", root / "data", seed=0)
    return synth_labels(manifest, "recipe")


@pytest.fixture(scope="session")
def overfit_manifest(small_dataset):
    """32 images drawn from the small dataset, all in the train split."""
    idx = sorted(random.Random(0).sample(range(len(small_dataset)), 32))
    return small_dataset.with_entries(replace(small_dataset.entries[i], split="train") for i in idx)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
