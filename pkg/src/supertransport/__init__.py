"""Parallel transport along superpaths and flows on the odd tangent bundle."""
from .grassmann import GrassmannElement, SuperNumber
from .manifold_forms import DifferentialForm, PiTDerivation, ScalarField, SuperForm, VectorField
from .bundles import GradedBundle, GradedConnection, PiTConnection, PiTSection, pullback_connection
from .transport import (ConnectionTransport, LiftedTransport, Path, PiTConnectionTransport, ProjectedTransport,
                        SuperPath, recover_connection, roundtrip_residual)

__version__ = "0.1.0"
