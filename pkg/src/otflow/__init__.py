"""Transport-flow path attribution with optimal-transport diagnostics."""

__version__ = "0.1.0"

from .attribution import (
    AttributionVector,
    completeness_residual,
    integrated_gradients,
    path_attribution,
    transport_flow_attribution,
)
from .errors import NumericError, OtflowError, ValidationError
from .ot import Gaussian, GaussianOTField, brenier_map, displacement_interpolation, gaussian_w2_squared
from .paths import CurveSpec, Trajectory, integrate_backward, integrate_forward, sample_curve

__all__ = [
    "AttributionVector", "CurveSpec", "Gaussian", "GaussianOTField", "NumericError", "OtflowError",
    "Trajectory", "ValidationError", "brenier_map", "completeness_residual", "displacement_interpolation",
    "gaussian_w2_squared", "integrate_backward", "integrate_forward", "integrated_gradients",
    "path_attribution", "sample_curve", "transport_flow_attribution",
]
