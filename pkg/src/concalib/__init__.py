"""Self-supervised LiDAR-camera extrinsic calibration.

Trains a pose-regression network under appearance- and geometric-consistency
losses so a single forward pass corrects a perturbed extrinsic.
"""

__version__ = "0.1.0"
