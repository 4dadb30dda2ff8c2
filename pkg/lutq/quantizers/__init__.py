"""Weight quantizers: dictionary look-up, k-means refinement and fixed grids."""

from .dictionary import AssignmentTensor, Dictionary, QuantizedWeight, lookup, quantization_error  # noqa: F401
from .fixed import (  # noqa: F401
    quantize_fp,
    quantize_pow2_fixed,
    round_pow2,
)
from .kmeans import initial_dictionary, kmeans_prune, kmeans_step, kmeans_step_fixed, lutq_quantize  # noqa: F401
