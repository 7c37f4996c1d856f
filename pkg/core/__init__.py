from core.errors import DeepMorphError
from core.foreground import threshold_foreground
from core.metrics import circle_param_rmse, filter_in_beam, point_to_curve_rmse
from core.types import Circle, ConfidenceMap, PointSet, Polyline

__all__ = [
    "Circle",
    "ConfidenceMap",
    "DeepMorphError",
    "PointSet",
    "Polyline",
    "circle_param_rmse",
    "filter_in_beam",
    "point_to_curve_rmse",
    "threshold_foreground",
]
