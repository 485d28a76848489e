"""Real-time garment deformation driven by character motion.

A per-garment neural displacement field conditioned on a discrete motion
latent, trained against the built-in cloth simulator, served over a
websocket at interactive rates. See the README for the tour.
"""

__version__ = "0.1.0"

from .errors import (DataFormatError, DimensionError, MagicError,
                     NumericError, TruncationError, UnicError, VersionError)
from .profiles import PROFILES, Hyper, get_profile

__all__ = [
    "__version__",
    "UnicError", "DataFormatError", "MagicError", "VersionError",
    "TruncationError", "DimensionError", "NumericError",
    "Hyper", "PROFILES", "get_profile",
]
