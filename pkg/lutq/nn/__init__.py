"""Desk-scale networks and the LUT-Q training loop."""

from .layers import AffineLayer, BatchNormLayer, Conv2DLayer, bn_fold_scale  # noqa: F401
from .network import Network, backward_ste, build_mlp, forward, network_class  # noqa: F401
from .train import calibrate_activation_ranges, evaluate, sgd_step, train  # noqa: F401
