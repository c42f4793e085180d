"""Contact quality scoring for surface pairs from multi-resolution activation grids."""

from .activation import ActivationGrid, MultiResInput, bin_points, build_multires, padded_bounds
from .detect import Scene, body_diagonal, detect_pairs
from .errors import ContactQualityError
from .features import ContactFeatures, OracleThresholds, compute_features, oracle_label
from .geometry import LabeledPointSet, SurfacePair, load_points, load_scene, write_points
from .model import ContactNet, NetConfig, TrainConfig, build, load_weights, quality_score, save_weights

__version__ = "0.1.0"

__all__ = [
    "ActivationGrid", "ContactFeatures", "ContactNet", "ContactQualityError", "LabeledPointSet",
    "MultiResInput", "NetConfig", "OracleThresholds", "Scene", "SurfacePair", "TrainConfig",
    "bin_points", "body_diagonal", "build", "build_multires", "compute_features",
    "detect_pairs", "load_points", "load_scene", "load_weights", "oracle_label",
    "padded_bounds", "quality_score", "save_weights", "write_points",
]
