"""Source-free open-set domain adaptation with synthetic known/unknown features."""

from .adapt import AdaptConfig
from .classifier import ClassifierConfig
from .config import RunConfig, load_config
from .data import LabeledSet, ScenarioConfig, generate_scenario, read_features, write_features
from .metrics import open_set_metrics, threshold_baseline
from .model import ModelSnapshot, SourceConfig, load_snapshot, save_snapshot
from .pipeline import RRDA, SourceModel
from .synthgen import SynthConfig, SyntheticSet

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "ClassifierConfig",
    "LabeledSet",
    "ModelSnapshot",
    "RRDA",
    "RunConfig",
    "ScenarioConfig",
    "SourceConfig",
    "SourceModel",
    "SynthConfig",
    "SyntheticSet",
    "generate_scenario",
    "load_config",
    "load_snapshot",
    "open_set_metrics",
    "read_features",
    "save_snapshot",
    "threshold_baseline",
    "write_features",
]
