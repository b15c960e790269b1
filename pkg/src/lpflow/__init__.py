"""Numerical toolkit for Lyapunov spectra of smooth flows via the (scaled)
linear Poincare flow: cocycle spectra, dominated splittings, quasi-hyperbolic
string certificates, periodic-orbit closing with shadowing validation, and
weak* comparison of empirical and periodic measures.
"""

from . import (cli, errors, field, flow, measures, orbits, pesin, plots,
               poincare, spectra)
from .errors import LpflowError

__version__ = "0.1.0"

__all__ = ["cli", "errors", "field", "flow", "measures", "orbits", "pesin",
           "plots", "poincare", "spectra", "LpflowError", "__version__"]
