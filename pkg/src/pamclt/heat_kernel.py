"""Heat kernel p_t and the increment functions Delta_t, R_t, N_t."""

import numpy as np

from .errors import DomainError


def _check_time(t):
    if np.any(np.asarray(t) <= 0):
        raise DomainError("heat kernel needs t > 0")


def _sq_norm(x, d):
    x = np.asarray(x, dtype=float)
    if d == 1:
        return x * x
    if x.shape[-1] != d:
        raise DomainError(f"point must have trailing dimension {d}, got shape {x.shape}")
    return np.sum(x * x, axis=-1)


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def p(t, x, d=1):
    """Gaussian density (2 pi t)^(-d/2) exp(-|x|^2 / (2t))."""
    _check_time(t)
    out = (2.0 * np.pi * t) ** (-d / 2.0) * np.exp(-_sq_norm(x, d) / (2.0 * t))
    return _scalar(out)


def fourier_p(t, xi, d=1):
    """F p_t(xi) = exp(-t |xi|^2 / 2); t = 0 gives 1."""
    if np.any(np.asarray(t) < 0):
        raise DomainError("fourier_p needs t >= 0")
    return _scalar(np.exp(-0.5 * t * _sq_norm(xi, d)))


def delta_incr(t, x, x1, d=1):
    """Delta_t(x, x') = p_t(x + x') - p_t(x)."""
    x, x1 = np.asarray(x, dtype=float), np.asarray(x1, dtype=float)
    return _scalar(np.asarray(p(t, x + x1, d)) - p(t, x, d))


def rect_incr(t, x, x1, x2, d=1):
    """R_t(x, x', x'') = p_t(x+x'-x'') - p_t(x+x') - p_t(x-x'') + p_t(x)."""
    x, x1, x2 = (np.asarray(v, dtype=float) for v in (x, x1, x2))
    out = (np.asarray(p(t, x + x1 - x2, d)) - p(t, x + x1, d)
           - p(t, x - x2, d) + p(t, x, d))
    return _scalar(out)


def n_weight(t, x, d=1):
    """N_t(x) = t^(-1/8) |x|^(1/4) on |x| <= sqrt(t), and 1 beyond."""
    _check_time(t)
    r = np.sqrt(_sq_norm(x, d))
    inside = r <= np.sqrt(t)
    out = np.where(inside, t ** (-0.125) * r**0.25, 1.0)
    return _scalar(out)
