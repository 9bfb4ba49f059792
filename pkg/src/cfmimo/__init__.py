"""Cell-free massive MIMO AP-UE association: simulator, trainer, baselines."""

from .config import ExperimentConfig, load_scenario, save_scenario
from .metrics import ObjectiveSpec

__all__ = ["ExperimentConfig", "ObjectiveSpec", "load_scenario", "save_scenario"]
__version__ = "0.1.0"
