"""Multi-scale feature fusion network for no-reference PET/CT image quality assessment."""
from .backbones import BackboneSpec
from .fusion import AGCA, FusionConfig
from .model import MSIQA, ModelConfig, load_checkpoint, save_checkpoint
from .objectives import LossConfig, plcc, srocc

__version__ = "0.1.0"
