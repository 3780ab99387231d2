"""Adaptive quadrature with the package-wide tolerance policy."""

import numpy as np
from scipy import integrate

from .errors import QuadratureFailure

REL_TOL = 1e-8
# QUADPACK uses 21 nodes per subinterval; this keeps the total below 10**6.
MAX_SUBINTERVALS = 47000


def quad_checked(f, a, b, rel_tol=REL_TOL, abs_tol=0.0, what="integral", **kwargs):
    """Run ``scipy.integrate.quad`` and raise if the error estimate is too large.

    Returns ``(value, abserr)``.
    """
    kwargs.setdefault("limit", MAX_SUBINTERVALS)
    # QUADPACK stops at its own estimate; ask for a bit more than we check.
    value, err = integrate.quad(f, a, b, epsabs=abs_tol * 0.1, epsrel=max(rel_tol * 0.1, 2e-14), **kwargs)[:2]
    if not np.isfinite(value) or err > max(rel_tol * abs(value), abs_tol):
        raise QuadratureFailure(
            f"{what}: error estimate {err:.3g} exceeds tolerance for value {value:.6g}"
        )
    return value, err
