"""Video delivery simulation and chunk-level bottleneck diagnosis."""
__version__ = "0.1.0"
