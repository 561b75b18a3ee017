"""Online RGB-stream reconstruction with an isotropic Gaussian map."""

__version__ = "0.1.0"
