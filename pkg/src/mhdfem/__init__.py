"""Structure-preserving finite element solver for incompressible MHD."""

__version__ = "0.1.0"
