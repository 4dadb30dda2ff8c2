"""LUT-Q toolkit.

Dictionary/assignment weight quantization with straight-through training,
multiplier-less inference kernels and analytic footprint accounting.
"""

__version__ = "0.1.0"

__all__ = [
    "data_models",
    "errors",
    "settings",
]
