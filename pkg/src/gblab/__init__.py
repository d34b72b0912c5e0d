"""Monte Carlo laboratory for curvature integrals on manifolds with boundary.

The package estimates Euler characteristics by simulating reflected
Brownian bridge loops, evolving a discontinuous multiplicative functional
through curvature and boundary-bending terms, and taking supertraces over
the exterior algebra.  Closed-form model manifolds supply exact reference
values throughout.
"""

__version__ = "0.1.0"

from . import errors, estimator, exterior, geometry, kernels, stochastic
from .geometry import model_catalog

__all__ = [
    "__version__",
    "errors",
    "estimator",
    "exterior",
    "geometry",
    "kernels",
    "stochastic",
    "model_catalog",
]
