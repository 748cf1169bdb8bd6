"""Transport-map-enhanced samplers: targets, flows, kernels, metrics and bounds."""

__version__ = "0.1.0"
