"""Channel-count-agnostic EEG window classification with a weight-shared
single-channel extractor and a fused classifier head."""

from .core import Dataset, Recording, Segment, SoftLabel, ValidationError, load_dataset, save_dataset
from .model import ModelConfig, ModelParams, init_params

__version__ = "0.1.0"
