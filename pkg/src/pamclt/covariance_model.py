"""Noise regimes with their kernels and spectral densities, plus the P0 inner product.

Fourier convention: ``F phi(xi) = int exp(-i xi x) phi(x) dx`` and the spectral
density ``g`` satisfies ``gamma(x) = int exp(-i xi x) g(xi) dxi``.
"""

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError, GridMismatch, UnsupportedRegime
from .quadrature import quad_checked

REGIMES = ("white", "integrable", "riesz", "rough")


def c_h_constant(H: float) -> float:
    """Normalising constant of the rough spectral density, Gamma(2H+1) sin(pi H) / (2 pi)."""
    if not 0.0 < H < 0.5:
        raise DomainError(f"c_H requires 0 < H < 1/2, got H={H}")
    return math.gamma(2.0 * H + 1.0) * math.sin(math.pi * H) / (2.0 * math.pi)


def gagliardo_constant(H: float) -> float:
    return H * (1.0 - 2.0 * H) / 2.0


def _sphere_area(d: int) -> float:
    # surface measure of the unit sphere in R^d (d=1: the two points +-1)
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@functools.lru_cache(maxsize=None)
def riesz_constant(d: int, beta: float) -> float:
    """C_{d,beta} such that |x|^-beta = int exp(-i xi x) C |xi|^(beta-d) dxi.

    Pinned numerically by pairing both sides against the Gaussian probe
    w(x) = exp(-|x|^2/2), whose transform is (2 pi)^(d/2) exp(-|xi|^2/2).
    The angular factors cancel, leaving two radial integrals.
    """

    def radial_moment(p):
        # int_0^inf r^p exp(-r^2/2) dr, singular at 0 when p < 0
        head, _ = quad_checked(lambda r: math.exp(-r * r / 2.0), 0.0, 1.0,
                               rel_tol=1e-12, weight="alg", wvar=(p, 0.0))
        tail, _ = quad_checked(lambda r: r**p * math.exp(-r * r / 2.0), 1.0, np.inf,
                               rel_tol=1e-12)
        return head + tail

    lhs = radial_moment(d - 1.0 - beta)
    rhs = (2.0 * math.pi) ** (d / 2.0) * radial_moment(beta - 1.0)
    return lhs / rhs


def riesz_constant_closed_form(d: int, beta: float) -> float:
    return math.gamma((d - beta) / 2.0) / (math.pi ** (d / 2.0) * 2.0**beta * math.gamma(beta / 2.0))


@dataclass(frozen=True)
class CovarianceModel:
    """Law of the spatial noise.

    ``regime`` is one of ``white``, ``integrable``, ``riesz``, ``rough``.
    The integrable regime uses the built-in pair gamma(x) = exp(-|x|^2/2).
    """

    regime: str
    d: int = 1
    beta: Optional[float] = None
    H: Optional[float] = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d!r}")
        if self.regime == "white" and self.d != 1:
            raise DomainError("white noise is only admissible for d = 1")
        if self.regime == "integrable" and self.d > 2:
            raise DomainError("integrable kernel is built in for d = 1, 2 only")
        if self.regime == "riesz":
            if self.beta is None:
                raise ConfigError("riesz regime needs beta")
            if not 0.0 < self.beta < min(self.d, 2):
                raise DomainError(
                    f"Riesz kernel needs beta in (0, d ∧ 2) = (0, {min(self.d, 2)}), got beta={self.beta}"
                )
        elif self.beta is not None:
            raise ConfigError(f"beta is only meaningful for the riesz regime, not {self.regime}")
        if self.regime == "rough":
            if self.H is None:
                raise ConfigError("rough regime needs H")
            if self.d != 1:
                raise DomainError("rough noise is only defined for d = 1")
            if not 0.25 < self.H < 0.5:
                raise DomainError(f"rough noise needs H in (1/4, 1/2), got H={self.H}")
        elif self.H is not None:
            raise ConfigError(f"H is only meaningful for the rough regime, not {self.regime}")

    @classmethod
    def white(cls):
        return cls("white", 1)

    @classmethod
    def integrable(cls, d=1):
        return cls("integrable", d)

    @classmethod
    def riesz(cls, beta, d=1):
        return cls("riesz", d, beta=float(beta))

    @classmethod
    def rough(cls, H):
        return cls("rough", 1, H=float(H))

    @classmethod
    def from_mapping(cls, section):
        """Build from a config mapping with keys regime, d, beta, H."""
        allowed = {"regime", "d", "beta", "H"}
        unknown = set(section) - allowed
        if unknown:
            raise ConfigError(f"unknown key(s) in model section: {sorted(unknown)}")
        if "regime" not in section:
            raise ConfigError("model section needs 'regime'")
        try:
            d = int(section.get("d", 1))
            beta = float(section["beta"]) if section.get("beta") is not None else None
            H = float(section["H"]) if section.get("H") is not None else None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model section: {exc}") from None
        return cls(str(section["regime"]).strip().lower(), d, beta=beta, H=H)

    def to_dict(self):
        out = {"regime": self.regime, "d": int(self.d)}
        if self.beta is not None:
            out["beta"] = self.beta
        if self.H is not None:
            out["H"] = self.H
        return out

    @property
    def tag(self) -> str:
        extra = "".join(f",{k}={v}" for k, v in self.to_dict().items() if k in ("beta", "H"))
        return f"{self.regime}(d={self.d}{extra})"

    @property
    def has_kernel(self) -> bool:
        """True when gamma is a pointwise function."""
        return self.regime in ("integrable", "riesz")

    @property
    def power_exponent(self) -> Optional[float]:
        """Exponent a with g(xi) = coef |xi|^a, or None for the integrable regime."""
        if self.regime == "white":
            return 0.0
        if self.regime == "riesz":
            return self.beta - self.d
        if self.regime == "rough":
            return 1.0 - 2.0 * self.H
        return None

    @property
    def power_coefficient(self) -> Optional[float]:
        if self.regime == "white":
            return (2.0 * math.pi) ** (-self.d)
        if self.regime == "riesz":
            return riesz_constant(self.d, self.beta)
        if self.regime == "rough":
            return c_h_constant(self.H)
        return None


def _radius(model, x):
    x = np.asarray(x, dtype=float)
    if model.d == 1:
        return np.abs(x)
    if x.shape[-1] != model.d:
        raise DomainError(f"point must have trailing dimension {model.d}, got shape {x.shape}")
    return np.sqrt(np.sum(x * x, axis=-1))


def gamma_at(model: CovarianceModel, x):
    """Covariance kernel gamma(x) for the function-valued regimes."""
    if not model.has_kernel:
        raise UnsupportedRegime(f"gamma is not a pointwise function for the {model.regime} regime")
    r = _radius(model, x)
    if model.regime == "integrable":
        out = np.exp(-0.5 * r * r)
    else:
        if np.any(r == 0.0):
            raise DomainError("Riesz kernel is singular at x = 0")
        out = r ** (-model.beta)
    return float(out) if np.ndim(out) == 0 else out


def density_radial(model: CovarianceModel, r):
    """Spectral density as a function of |xi| (no domain checks; r=0 gives inf/0)."""
    r = np.asarray(r, dtype=float)
    if model.regime == "integrable":
        return (2.0 * math.pi) ** (-model.d / 2.0) * np.exp(-0.5 * r * r)
    if model.regime == "white":
        return np.full_like(r, (2.0 * math.pi) ** (-model.d))
    a = model.power_exponent
    with np.errstate(divide="ignore"):
        return model.power_coefficient * r**a


def spectral_density(model: CovarianceModel, xi):
    """Density g of the spectral measure mu at frequency xi."""
    r = _radius(model, xi)
    if model.regime == "riesz" and np.any(r == 0.0):
        raise DomainError("Riesz spectral density is singular at xi = 0")
    out = density_radial(model, r)
    return float(out) if np.ndim(out) == 0 else out


def origin_weight(model: CovarianceModel, dxi: float) -> float:
    """Quadrature weight of the xi = 0 node of a 1-D lattice with spacing dxi.

    For g = c |xi|^a the lattice sum over xi != 0 misses
    -2 zeta(-a) c dxi^(1+a) f(0) of the integral of g f (generalised
    Euler-Maclaurin expansion); this weight restores it. For a = 0 it
    reduces to the trapezoid weight c dxi.
    """
    if model.d != 1:
        raise UnsupportedRegime("lattice weights are implemented for d = 1")
    a = model.power_exponent
    if a is None:
        return float(density_radial(model, 0.0)) * dxi
    return float(-2.0 * special.zeta(-a) * model.power_coefficient * dxi ** (1.0 + a))


def lattice_weights(model: CovarianceModel, xi, dxi: float):
    """Per-node weights w_k ~ g(xi_k) dxi on the lattice xi_k = k dxi (1-D)."""
    xi = np.asarray(xi, dtype=float)
    r = np.abs(xi)
    at_origin = r == 0.0
    safe = np.where(at_origin, 1.0, r)
    w = density_radial(model, safe) * dxi
    return np.where(at_origin, origin_weight(model, dxi), w)


def dalang_integral(model: CovarianceModel) -> float:
    """int mu(dxi) / (1 + |xi|^2), by adaptive quadrature in the radial variable."""
    d = model.d
    area = _sphere_area(d)
    a = model.power_exponent
    if a is None:
        f = lambda r: r ** (d - 1) * float(density_radial(model, r)) / (1.0 + r * r)
        value, _ = quad_checked(f, 0.0, np.inf, what="dalang integral")
        return area * value
    p = d - 1.0 + a
    coef = model.power_coefficient
    # r in [0,1]: r^p / (1+r^2); r in [1,inf) with r = 1/u: u^-p / (1+u^2)
    head, _ = quad_checked(lambda r: 1.0 / (1.0 + r * r), 0.0, 1.0,
                           weight="alg", wvar=(p, 0.0), what="dalang integral")
    tail, _ = quad_checked(lambda u: 1.0 / (1.0 + u * u), 0.0, 1.0,
                           weight="alg", wvar=(-p, 0.0), what="dalang integral")
    return area * coef * (head + tail)


@dataclass(frozen=True)
class TestFunction:
    """Samples of a smooth, compactly supported function on x_j = x0 + j dx."""

    __test__ = False  # keep pytest from collecting this class

    values: np.ndarray
    x0: float
    dx: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 4:
            raise DomainError("test function needs a 1-D array of at least 4 samples")
        scale = max(np.max(np.abs(v)), 1.0)
        if abs(v[0]) > 1e-10 * scale or abs(v[-1]) > 1e-10 * scale:
            raise DomainError("test function must vanish at the grid boundary")
        object.__setattr__(self, "values", v)

    @classmethod
    def on_grid(cls, f, half_width, n_points):
        dx = 2.0 * half_width / n_points
        x = -half_width + dx * np.arange(n_points)
        return cls(f(x), -half_width, dx)

    @property
    def x(self):
        return self.x0 + self.dx * np.arange(self.values.size)


def _check_same_grid(phi, psi):
    if phi.values.size != psi.values.size or phi.dx != psi.dx or phi.x0 != psi.x0:
        raise GridMismatch("test functions live on different grids")


def inner_spectral(phi: TestFunction, psi: TestFunction, model: CovarianceModel, pad: int = 4) -> float:
    """<phi, psi>_P0 = int F phi conj(F psi) mu(dxi), via a zero-padded FFT."""
    _check_same_grid(phi, psi)
    if model.d != 1:
        raise UnsupportedRegime("grid inner products are implemented for d = 1")
    n = phi.values.size * pad
    dx = phi.dx
    # the common phase exp(-i xi x0) cancels in the product
    f_phi = np.fft.rfft(phi.values, n) * dx
    f_psi = np.fft.rfft(psi.values, n) * dx
    dxi = 2.0 * np.pi / (n * dx)
    xi = dxi * np.arange(f_phi.size)
    prod = (f_phi * np.conj(f_psi)).real
    w = lattice_weights(model, xi, dxi)
    mult = np.full(xi.size, 2.0)
    mult[0] = 1.0
    if n % 2 == 0:
        mult[-1] = 1.0
    return float(np.sum(mult * w * prod))


def inner_gagliardo(phi: TestFunction, psi: TestFunction, H: float) -> float:
    """C_H int int (phi(x)-phi(y))(psi(x)-psi(y)) |x-y|^(2H-2) dx dy on the lattice.

    The function is zero outside the grid, so the lattice sum runs over all
    integer lags; the part of the plane outside the window is summed in
    closed form with zeta(2-2H). The diagonal cell (lag 0) contributes 0.
    """
    if not 0.25 < H < 0.5:
        raise DomainError(f"Gagliardo representation needs H in (1/4, 1/2), got {H}")
    _check_same_grid(phi, psi)
    p, q = phi.values, psi.values
    n_pts = p.size
    n = 2 * n_pts
    # c_sym[k] = sum_i (p[i+k] q[i] + p[i] q[i+k]); the real part of the cross
    # spectrum is symmetric in (p, q) bit for bit
    fp, fq = np.fft.rfft(p, n), np.fft.rfft(q, n)
    cross = fp.real * fq.real + fp.imag * fq.imag
    lag = np.arange(1, n_pts)
    c_sym = 2.0 * np.fft.irfft(cross, n)[1:n_pts]
    # sum over k != 0 of |k|^(2H-2) (2P - c_k - c_-k)
    total = 4.0 * np.dot(p, q) * special.zeta(2.0 - 2.0 * H) - 2.0 * np.sum(lag ** (2.0 * H - 2.0) * c_sym)
    return float(gagliardo_constant(H) * phi.dx ** (2.0 * H) * total)
