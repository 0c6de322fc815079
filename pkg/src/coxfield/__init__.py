"""coxfield: conditional log Gaussian Cox processes for replicated plot data."""
from .library import CoxFieldLibrary

__version__ = "0.1.0"

__all__ = ["CoxFieldLibrary", "__version__"]
