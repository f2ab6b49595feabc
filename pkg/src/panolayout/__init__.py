"""Semi-supervised room layout estimation from equirectangular panoramas."""
from .geometry import (
    BoundaryTarget,
    CornerAnnotation,
    DetectionError,
    GeometryError,
    InvalidAnnotationError,
    ManhattanLayout,
    Panorama,
    corners_to_layout,
    layout_to_boundary,
)
from .postprocess import ReconstructConfig, reconstruct
from .predictor import Predictor, PredictorConfig
from .training import TrainConfig, predict_eval, train

__version__ = "0.1.0"
