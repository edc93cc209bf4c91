"""Numerical curvature identities and integrability checks for almost Kahler manifolds."""
__version__ = "0.1.0"

from .chart import Domain, ManifoldSpec, curvature_bundle, make_jet, ricci_jet  # noqa: F401
from .fd import FDConfig  # noqa: F401
