from .config import TrainConfig, load_config
from .evaluate import EvalReport, evaluate, score_image
from .labels import synth_labels
from .train import train
from .visualize import export_feature_maps
