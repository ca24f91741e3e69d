"""Seismic event detection with a 1D U-Net picker, Grad-CAM, exact channel
Shapley attribution and a SHAP-gated decision rule."""

from .errors import (NumericError, ShapeError, ShapgateError, StorageError,
                     ValidationError)

__version__ = "0.1.0"

__all__ = ["ShapgateError", "ValidationError", "ShapeError", "StorageError",
           "NumericError", "__version__"]
