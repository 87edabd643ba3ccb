"""detcnn: a bit-exactly reproducible micro deep-learning engine.

Small CNNs (a plain conv stack and a separable-conv residual net), trained
with RMSprop on binary labels, explained with gradient-weighted class
activation maps, and wrapped in a harness that fingerprints weights and
compares runs bit for bit. Every floating-point result is a pure function of
(inputs, seeds, config): accumulation orders are fixed, transcendentals are
engine-owned, random streams are counter-based, and thread count never
changes a single bit.
"""

from . import threads  # noqa: F401  (threading layer must be set pre-numba)
from .tensor import Tensor

__version__ = "1.0.0"

__all__ = ["Tensor", "__version__"]
