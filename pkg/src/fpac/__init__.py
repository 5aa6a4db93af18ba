"""Feature-point actor-critic: a spatial-softmax keypoint bottleneck for SAC from pixels."""

__version__ = "0.1.0"
