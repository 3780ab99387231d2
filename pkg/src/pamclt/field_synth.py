"""Spectral synthesis of the mollified noise on a periodic 1-D grid.

The field is represented as

    W_eps(x) = sum_k c_k exp(i xi_k x),   xi_k = pi k / L,  |k| <= n/2,

with independent (Hermitian-paired) complex Gaussian coefficients,
E|c_k|^2 = w_k exp(-eps xi_k^2) and w_k the lattice weight of the spectral
measure (``covariance_model.lattice_weights``). Grid node j sits at
x_j = j dx taken modulo 2L, i.e. in FFT order; ``GridSpec.x`` returns the
centred coordinates in that order.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import special

from .covariance_model import CovarianceModel, density_radial, lattice_weights
from .errors import ConfigError, GridMismatch, UnsupportedRegime
from .quadrature import quad_checked

ALIASING_LEVEL = 0.1


@dataclass(frozen=True)
class GridSpec:
    half_width: float
    n_points: int

    def __post_init__(self):
        n = int(self.n_points)
        if n < 8 or n & (n - 1):
            raise ConfigError(f"n_points must be a power of two >= 8, got {self.n_points}")
        if not self.half_width > 0:
            raise ConfigError(f"half_width must be positive, got {self.half_width}")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def dxi(self) -> float:
        return math.pi / self.half_width

    @property
    def n_freq(self) -> int:
        return self.n_points // 2 + 1

    @property
    def xi(self):
        """Non-negative frequencies xi_k = k pi / L, k = 0..n/2 (rfft layout)."""
        return self.dxi * np.arange(self.n_freq)

    @property
    def xi_max(self) -> float:
        return self.dxi * (self.n_points // 2)

    @property
    def x(self):
        """Node coordinates in FFT order, wrapped into [-L, L)."""
        return np.fft.fftfreq(self.n_points, d=1.0 / (self.n_points * self.dx))

    @property
    def multiplicity(self):
        """How many lattice frequencies +-xi_k each rfft bin stands for."""
        m = np.full(self.n_freq, 2.0)
        m[0] = 1.0
        m[-1] = 1.0
        return m

    def transform(self, values):
        """F f(xi_k) ~ dx sum_j f(x_j) exp(-i xi_k x_j) for samples in FFT order."""
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.n_points:
            raise GridMismatch("samples do not match the grid size")
        return sfft.rfft(values, axis=-1) * self.dx

    def check_eps(self, eps, allow_aliasing=False):
        """Aliasing guard: exp(-eps xi_max^2) must not exceed ALIASING_LEVEL."""
        if eps <= 0:
            raise ConfigError(f"mollification eps must be positive, got {eps}")
        if not allow_aliasing and math.exp(-eps * self.xi_max**2) > ALIASING_LEVEL:
            eps_min = math.log(1.0 / ALIASING_LEVEL) / self.xi_max**2
            raise ConfigError(
                f"eps={eps:g} is too small for dx={self.dx:g} (need eps >= {eps_min:.3g}); "
                "use --allow-aliasing to override"
            )

    def to_dict(self):
        return {"L": self.half_width, "n_points": int(self.n_points)}


def spectral_variances(model: CovarianceModel, grid: GridSpec, eps: float):
    """E|c_k|^2 for the rfft bins: lattice weight times exp(-eps xi^2)."""
    if model.d != 1:
        raise UnsupportedRegime("field synthesis is implemented for d = 1")
    xi = grid.xi
    return lattice_weights(model, xi, grid.dxi) * np.exp(-eps * xi * xi)


@dataclass(frozen=True, eq=False)
class NoiseField:
    model: CovarianceModel
    grid: GridSpec
    eps: float
    seed: int
    spectral_coeffs: np.ndarray = field(repr=False)
    real_samples: np.ndarray = field(repr=False)

    def full_coeffs(self):
        """Coefficients for k = -n/2+1 .. n/2 in FFT order (Hermitian)."""
        n = self.grid.n_points
        out = np.empty(n, dtype=complex)
        out[: self.grid.n_freq] = self.spectral_coeffs
        out[self.grid.n_freq:] = np.conj(self.spectral_coeffs[1:-1][::-1])
        return out


def coefficient_normals(seed: int, n_freq: int):
    """Standard normals feeding the coefficients; Philox keyed by the seed."""
    gen = np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))
    return gen.standard_normal((n_freq, 2))


def synthesize(model: CovarianceModel, grid: GridSpec, eps: float, seed: int,
               allow_aliasing: bool = False, variances=None) -> NoiseField:
    """Draw a stationary Gaussian field with covariance ~ mollified_cov(model, eps, .)."""
    grid.check_eps(eps, allow_aliasing)
    if variances is None:
        variances = spectral_variances(model, grid, eps)
    z = coefficient_normals(seed, grid.n_freq)
    coeffs = np.sqrt(variances / 2.0) * (z[:, 0] + 1j * z[:, 1])
    # origin and Nyquist bins are their own conjugates: real coefficients
    coeffs[0] = math.sqrt(variances[0]) * z[0, 0]
    coeffs[-1] = math.sqrt(variances[-1]) * z[-1, 0]
    samples = sfft.irfft(coeffs, n=grid.n_points) * grid.n_points
    coeffs.setflags(write=False)
    samples.setflags(write=False)
    return NoiseField(model, grid, float(eps), int(seed), coeffs, samples)


def pair_field(field: NoiseField, coeffs) -> float:
    """Discrete W_eps(phi) = sum_k conj(F phi(xi_k)) c_k over the full lattice.

    ``coeffs`` holds F phi on the rfft bins (e.g. ``grid.transform(phi)``).
    """
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-1] != field.grid.n_freq:
        raise GridMismatch("coefficients are not on the field's frequency grid")
    terms = (np.conj(coeffs) * field.spectral_coeffs).real
    return np.sum(field.grid.multiplicity * terms, axis=-1)


def mollified_cov(model: CovarianceModel, eps: float, lag: float) -> float:
    """int exp(-eps xi^2) cos(xi lag) g(xi) dxi by adaptive quadrature (d = 1)."""
    if model.d != 1:
        raise UnsupportedRegime("mollified_cov is implemented for d = 1")
    if eps <= 0:
        raise ConfigError("mollified_cov needs eps > 0")
    h = abs(float(lag))
    a = model.power_exponent
    upper = math.sqrt(80.0 / eps)  # exp(-80) is below double precision relative to the head
    damp = lambda x: math.exp(-eps * x * x)
    tol = dict(rel_tol=1e-8, abs_tol=1e-13, what="mollified covariance")
    if a is None or a == 0.0:
        base = lambda x: damp(x) * float(density_radial(model, x))
        if h == 0.0:
            val, _ = quad_checked(base, 0.0, upper, **tol)
        else:
            val, _ = quad_checked(base, 0.0, upper, weight="cos", wvar=h, **tol)
        return 2.0 * val
    coef = model.power_coefficient
    # head [0, a0] carries the |xi|^a singularity/kink, tail is oscillatory
    a0 = min(1.0, upper) if h == 0.0 else min(1.0 / h, upper)
    head, _ = quad_checked(lambda x: damp(x) * math.cos(h * x), 0.0, a0,
                           weight="alg", wvar=(a, 0.0), **tol)
    tail_f = lambda x: damp(x) * x**a
    if h == 0.0:
        tail, _ = quad_checked(tail_f, a0, upper, **tol)
    else:
        tail, _ = quad_checked(tail_f, a0, upper, weight="cos", wvar=h, **tol)
    return 2.0 * coef * (head + tail)


def mollified_cov_closed(model: CovarianceModel, eps: float, lag):
    """Closed form of ``mollified_cov`` (vectorised), via 1F1 for power laws."""
    h2 = np.asarray(lag, dtype=float) ** 2
    if model.regime == "white":
        return math.sqrt(math.pi / eps) / (2.0 * math.pi) * np.exp(-h2 / (4.0 * eps))
    if model.regime == "integrable":
        s = 1.0 + 2.0 * eps
        return np.exp(-h2 / (2.0 * s)) / math.sqrt(s)
    a = model.power_exponent
    nu = (a + 1.0) / 2.0
    return (model.power_coefficient * eps ** (-nu) * special.gamma(nu)
            * special.hyp1f1(nu, 0.5, -h2 / (4.0 * eps)))


def periodic_cov(model: CovarianceModel, grid: GridSpec, eps: float):
    """Exact covariance of the synthesised field at every grid lag (FFT order)."""
    var = spectral_variances(model, grid, eps)
    return sfft.irfft(var, n=grid.n_points) * grid.n_points


# -- binary dump -------------------------------------------------------------

_HEADER = struct.Struct("<4sH16sIddIdQ")
_MAGIC = b"PAMF"
_VERSION = 1


def dump_field(field: NoiseField, path):
    """Write header + little-endian float64 samples (FFT order)."""
    m = field.model
    param = m.beta if m.beta is not None else (m.H if m.H is not None else 0.0)
    header = _HEADER.pack(_MAGIC, _VERSION, m.regime.encode("ascii"), m.d, float(param),
                          field.grid.half_width, field.grid.n_points, field.eps,
                          field.seed & 0xFFFFFFFFFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(field.real_samples, dtype="<f8").tobytes())


def load_field(path):
    """Read a dump; returns (header dict, samples array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, tag, d, param, L, n, eps, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a pamclt field dump")
    header = {"version": version, "regime": tag.rstrip(b"\0").decode("ascii"), "d": d,
              "param": param, "L": L, "n_points": n, "eps": eps, "seed": seed}
    samples = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=n)
    return header, samples
