from .distortions import (DistortionParams, DistortionRecipe, all_recipes, apply_gaussian, apply_jpeg,
                          apply_poisson, apply_recipe, psnr)
from .factory import build_dataset
from .manifest import (Manifest, ManifestEntry, aggregate_scores, apply_rater_scores, read_manifest,
                       read_rater_scores, split_by_patient, write_manifest)
