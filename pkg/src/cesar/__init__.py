"""Simulator for pairwise-masked aggregation of sparsified models on regular graphs."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"
