"""Monte Carlo Feynman-Kac estimators for the mollified equation.

Brownian paths are discretised with a left-point rule on ``n_steps`` equal
steps. Occupation measures are pushed to the field's frequency lattice,
either exactly (direct sums) or by cloud-in-cell deposition on the periodic
grid followed by division by the CIC window sinc^2(xi dx / 2).
"""

import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft
from scipy.interpolate import CubicSpline

from .covariance_model import CovarianceModel
from .errors import DomainError, GridMismatch, OverflowGuard, RangeError, TableRangeError
from .field_synth import GridSpec, NoiseField, mollified_cov_closed, spectral_variances
from .parallel import get_threads, ordered_map
from .rng import generator, seed_derive

EXP_LIMIT = 700.0
STEPS_PER_EPS = 50
MIN_STEPS = 64


def time_steps(t: float, eps: float) -> int:
    """Default step count: max(64, ceil(50 t / eps))."""
    return max(MIN_STEPS, math.ceil(STEPS_PER_EPS * t / eps - 1e-9))


@dataclass(eq=False)
class BrownianEnsemble:
    t: float
    n_steps: int
    n_paths: int
    seed: int
    increments: np.ndarray = field(repr=False)
    _phi_cache: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return self.t / self.n_steps

    def steps_for(self, horizon: Optional[float]) -> int:
        if horizon is None:
            return self.n_steps
        if not 0 <= horizon <= self.t * (1 + 1e-12):
            raise DomainError(f"horizon {horizon} outside [0, {self.t}]")
        k = horizon / self.dt
        if abs(k - round(k)) > 1e-6:
            raise DomainError(f"horizon {horizon} is not a multiple of dt = {self.dt}")
        return int(round(k))

    def positions(self, horizon=None):
        """B at the left points r_j = j dt, j < horizon / dt; shape (n_paths, steps)."""
        k = self.steps_for(horizon)
        pos = np.zeros((self.n_paths, k))
        if k > 1:
            np.cumsum(self.increments[:, : k - 1], axis=1, out=pos[:, 1:])
        return pos

    def phi(self, grid: GridSpec, horizon=None, method="cic"):
        """phi_m(xi_k) = sum_j dt exp(-i xi_k B_{r_j}) on the rfft bins of ``grid``."""
        key = (grid, self.steps_for(horizon), method)
        if key not in self._phi_cache:
            k = key[1]
            pos = self.positions(horizon)
            if method == "cic":
                out = _phi_cic(pos, grid, self.dt)
            elif method == "exact":
                out = _phi_exact(pos, grid, self.dt)
            else:
                raise ValueError(f"unknown method {method!r}")
            out[:, 0] = k * self.dt
            out.setflags(write=False)
            self._phi_cache[key] = out
        return self._phi_cache[key]

    def clear_cache(self):
        self._phi_cache.clear()


def sample_ensemble(t: float, n_steps: int, n_paths: int, seed: int) -> BrownianEnsemble:
    if t <= 0:
        raise DomainError("ensemble horizon must be positive")
    if n_steps < 1 or n_paths < 1:
        raise DomainError("n_steps and n_paths must be positive")
    gen = generator(seed)
    incr = gen.standard_normal((n_paths, n_steps)) * math.sqrt(t / n_steps)
    incr.setflags(write=False)
    return BrownianEnsemble(float(t), int(n_steps), int(n_paths), int(seed), incr)


def cic_window(grid: GridSpec):
    h = 0.5 * grid.xi * grid.dx
    return np.sinc(h / np.pi) ** 2


def _phi_cic(pos, grid, dt):
    n_paths = pos.shape[0]
    n = grid.n_points
    u = pos / grid.dx
    j0 = np.floor(u)
    frac = u - j0
    j0 = j0.astype(np.int64) % n
    base = (np.arange(n_paths, dtype=np.int64) * n)[:, None]
    size = n_paths * n
    hist = np.bincount((base + j0).ravel(), weights=((1.0 - frac) * dt).ravel(), minlength=size)
    hist += np.bincount((base + (j0 + 1) % n).ravel(), weights=(frac * dt).ravel(), minlength=size)
    spec = sfft.rfft(hist.reshape(n_paths, n), axis=1, workers=get_threads())
    spec /= cic_window(grid)
    return spec


def _phi_exact(pos, grid, dt, chunk=256):
    xi = grid.xi
    out = np.zeros((pos.shape[0], xi.size), dtype=complex)
    for m in range(pos.shape[0]):
        for j in range(0, pos.shape[1], chunk):
            b = pos[m, j: j + chunk]
            out[m] += np.exp(-1j * np.outer(b, xi)).sum(axis=0) * dt
    return out


def occupation_transform(ensemble: BrownianEnsemble, grid: GridSpec, eps: float,
                         horizon=None, method="cic"):
    """F A_{t,x} at x = 0 for each path: exp(-eps xi^2 / 2) phi_m(xi), shape (n_paths, n_freq).

    The translate by x multiplies by exp(-i xi x).
    """
    return ensemble.phi(grid, horizon, method) * np.exp(-0.5 * eps * grid.xi**2)


def _check_exponent(expo, what):
    top = float(np.max(expo))
    if not np.isfinite(top) or top > EXP_LIMIT:
        raise OverflowGuard(f"{what}: exponent {top:.4g} exceeds {EXP_LIMIT}")


@dataclass(eq=False)
class SolutionSample:
    """u_hat(t, x) at nodes ``x`` and the two path-half means."""

    x: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    halves: np.ndarray = field(repr=False)
    t: float
    n_paths: int
    eps: float
    field_seed: int
    path_seed: int


def path_weights(field: NoiseField, ensemble: BrownianEnsemble, horizon=None, method="cic"):
    """exp(W(A_x) - |A|^2 / 2) per path and grid point, shape (n_paths, n_points)."""
    grid = field.grid
    phi = ensemble.phi(grid, horizon, method)
    var = spectral_variances(field.model, grid, field.eps)
    norm2 = (np.abs(phi) ** 2 * (var * grid.multiplicity)).sum(axis=1)
    # the field coefficients already carry the full exp(-eps xi^2) damping
    expo = sfft.irfft(field.spectral_coeffs * np.conj(phi), n=grid.n_points, axis=1,
                      workers=get_threads())
    expo *= grid.n_points
    expo -= 0.5 * norm2[:, None]
    _check_exponent(expo, "Feynman-Kac weight")
    return np.exp(expo, out=expo)


@functools.lru_cache(maxsize=16)
def _window_cov_spectrum(model, grid, eps, m):
    """DFT (length m) of the CIC-deconvolved lattice covariance restricted to |lag| < m/2."""
    var = spectral_variances(model, grid, eps) / cic_window(grid) ** 2
    cov = sfft.irfft(var, n=grid.n_points) * grid.n_points
    lags = np.arange(m)
    lags = np.where(lags <= m // 2, lags, lags - m)
    spec = sfft.rfft(cov[lags % grid.n_points]).real
    spec.setflags(write=False)
    return spec


def _multiplicity(m):
    mult = np.full(m // 2 + 1, 2.0)
    mult[0] = mult[-1] = 1.0
    return mult


def window_weights(field: NoiseField, ensemble: BrownianEnsemble, half_width: float,
                   horizon=None, centre: float = 0.0):
    """Path weights on the nodes |x| <= half_width only, via CIC histograms.

    Every path starts at the origin, so its histogram fits in a short window and
    W(A_x) is a short correlation with the CIC-deconvolved field. Returns
    (x, weights) with x increasing and weights of shape (n_paths, len(x)).
    The window is centred on the grid node nearest to ``centre``.
    """
    grid = field.grid
    dx, n = grid.dx, grid.n_points
    nr = int(math.floor(half_width / dx + 1e-9))
    if 2 * nr + 1 > n:
        raise DomainError("window wider than the grid")
    pos = ensemble.positions(horizon)
    u = pos / dx
    j0 = np.floor(u)
    frac = u - j0
    j0 = j0.astype(np.int64)
    wc = int(np.max(np.abs(j0))) + 2
    span = 2 * nr + 1 + 2 * wc
    m = 1 << int(math.ceil(math.log2(max(span, 8 * wc))))
    dt = ensemble.dt
    n_paths = pos.shape[0]
    base = (np.arange(n_paths, dtype=np.int64) * m)[:, None]
    hist = np.bincount((base + j0 % m).ravel(), weights=((1.0 - frac) * dt).ravel(),
                       minlength=n_paths * m)
    hist += np.bincount((base + (j0 + 1) % m).ravel(), weights=(frac * dt).ravel(),
                        minlength=n_paths * m)
    hspec = sfft.rfft(hist.reshape(n_paths, m), axis=1, workers=get_threads())
    cspec = _window_cov_spectrum(field.model, grid, field.eps, m)
    norm2 = (np.abs(hspec) ** 2 * (cspec * _multiplicity(m))).sum(axis=1) / m
    deconv = sfft.irfft(field.spectral_coeffs / cic_window(grid), n=n) * n
    seg = np.zeros(m)
    c0 = int(round(centre / dx))
    seg[:span] = np.take(deconv, c0 + np.arange(-nr - wc, nr + wc + 1), mode="wrap")
    expo = sfft.irfft(np.conj(hspec) * sfft.rfft(seg), n=m, axis=1, workers=get_threads())
    expo = expo[:, wc: wc + 2 * nr + 1]
    expo -= 0.5 * norm2[:, None]
    _check_exponent(expo, "Feynman-Kac weight")
    return (c0 + np.arange(-nr, nr + 1)) * dx, np.exp(expo)


def point_weights(field: NoiseField, ensemble: BrownianEnsemble, x: float, horizon=None):
    """Path weights at the single node nearest to ``x``; shape (n_paths,)."""
    xs, w = window_weights(field, ensemble, 0.0, horizon, centre=x)
    return w[:, 0]


def u_estimate(field: NoiseField, ensemble: BrownianEnsemble, horizon=None,
               half_width=None, method="cic") -> SolutionSample:
    """Feynman-Kac average over the ensemble.

    With ``half_width`` the estimate is restricted to |x| <= half_width (CIC
    window route); otherwise it covers the whole grid in FFT order.
    """
    if half_width is None:
        x, w = field.grid.x, path_weights(field, ensemble, horizon, method)
    else:
        x, w = window_weights(field, ensemble, half_width, horizon)
    half = ensemble.n_paths // 2
    if half == 0:
        raise DomainError("need at least two paths")
    halves = np.stack([w[:half].mean(axis=0), w[half: 2 * half].mean(axis=0)])
    t = ensemble.t if horizon is None else float(horizon)
    return SolutionSample(x, w.mean(axis=0), halves, t, ensemble.n_paths, field.eps,
                          field.seed, ensemble.seed)


# -- cross functionals ---------------------------------------------------------

def _cross_spectrum(model, grid, eps, phi1, phi2):
    var = spectral_variances(model, grid, eps)
    return var * phi1 * np.conj(phi2)


def cross_profile(model: CovarianceModel, grid: GridSpec, eps: float, phi1, phi2):
    """I(z) at every grid lag z (FFT order) for each path pair; shape (pairs, n_points)."""
    w = _cross_spectrum(model, grid, eps, phi1, phi2)
    out = sfft.irfft(np.conj(w), n=grid.n_points, axis=-1, workers=get_threads())
    out *= grid.n_points
    return out


def _cross_at(model, grid, eps, phi1, phi2, z):
    w = _cross_spectrum(model, grid, eps, phi1, phi2) * grid.multiplicity
    z = np.atleast_1d(np.asarray(z, dtype=float))
    ph = np.exp(-1j * np.outer(z, grid.xi))  # (nz, n_freq)
    return (w @ ph.T).real  # (pairs, nz)


class KernelTable:
    """Cubic-spline table of the mollified covariance on [0, zmax]."""

    def __init__(self, model: CovarianceModel, eps: float, zmax: float, n_nodes: int = 2**15):
        self.model, self.eps, self.zmax = model, float(eps), float(zmax)
        nodes = np.linspace(0.0, self.zmax, n_nodes)
        vals = mollified_cov_closed(model, eps, nodes)
        self._spline = CubicSpline(nodes, vals, bc_type=((1, 0.0), "not-a-knot"))

    def __call__(self, z):
        a = np.abs(z)
        if a.size and float(np.max(a)) > self.zmax:
            raise TableRangeError(f"lag {float(np.max(a)):.4g} beyond table range {self.zmax:.4g}")
        return self._spline(a)


def table_for(model, eps, t, t2, z=0.0, n_nodes=2**15):
    return KernelTable(model, eps, 6.0 * math.sqrt(t + t2) + abs(float(z)), n_nodes)


def _riemann_pair(pos1, pos2, dt1, dt2, z, table, chunk=512):
    total = 0.0
    for j in range(0, pos1.size, chunk):
        diff = pos1[j: j + chunk, None] - pos2[None, :] + z
        total += float(table(diff).sum())
    return total * dt1 * dt2


def cross_functional(model: CovarianceModel, t: float, t2: float, z, ens1: BrownianEnsemble,
                     ens2: BrownianEnsemble, eps: float, method="spectral",
                     grid: Optional[GridSpec] = None, table: Optional[KernelTable] = None,
                     phi_method="cic"):
    """I^eps_{t,t'}(z) for the m-th path of ens1 paired with the m-th path of ens2.

    ``spectral`` works on the field lattice (needs ``grid``); ``riemann`` is the
    double time sum of the tabulated kernel. Returns shape (pairs,) for scalar z,
    else (pairs, len(z)).
    """
    if ens1.n_paths != ens2.n_paths:
        raise GridMismatch("ensembles must have the same number of paths")
    scalar = np.ndim(z) == 0
    if method == "spectral":
        if grid is None:
            raise GridMismatch("spectral cross functional needs a grid")
        out = _cross_at(model, grid, eps, ens1.phi(grid, t, phi_method),
                        ens2.phi(grid, t2, phi_method), z)
    elif method == "riemann":
        zs = np.atleast_1d(np.asarray(z, dtype=float))
        if table is None:
            table = table_for(model, eps, t, t2, float(np.max(np.abs(zs))))
        p1, p2 = ens1.positions(t), ens2.positions(t2)
        out = np.array([[_riemann_pair(p1[m], p2[m], ens1.dt, ens2.dt, zz, table) for zz in zs]
                        for m in range(ens1.n_paths)])
    else:
        raise ValueError(f"unknown method {method!r}")
    return out[:, 0] if scalar else out


# -- moments and correlation -----------------------------------------------------

def _pair_ensembles(t, s, eps, n_paths, seed, n_steps=None):
    horizon = max(t, s)
    steps = time_steps(horizon, eps) if n_steps is None else n_steps
    e1 = sample_ensemble(horizon, steps, n_paths, seed_derive(seed, "path", 1))
    e2 = sample_ensemble(horizon, steps, n_paths, seed_derive(seed, "path", 2))
    return e1, e2


def _chunks(total, size):
    return [(i, min(size, total - i)) for i in range(0, total, size)]


def moment_mc(model: CovarianceModel, times, points, n_samples: int, eps: float,
              grid: GridSpec, seed: int, n_steps=None, chunk=256, phi_method="cic"):
    """E prod_j u_eps(t_j, x_j) = E exp(sum_{j<k} I^{jk}(x_j - x_k)); returns (mean, se)."""
    times = [float(v) for v in times]
    points = [float(v) for v in points]
    n = len(times)
    if not 1 <= n <= 4 or len(points) != n:
        raise RangeError("moment_mc supports 1 <= n <= 4 matching times and points")
    if n == 1:
        return 1.0, 0.0
    horizon = max(times)
    steps = time_steps(horizon, eps) if n_steps is None else n_steps

    def run(job):
        c, size = job
        ens = [sample_ensemble(horizon, steps, size, seed_derive(seed, "moment", c, j))
               for j in range(n)]
        phis = [e.phi(grid, tj, phi_method) for e, tj in zip(ens, times)]
        expo = np.zeros(size)
        for j in range(n):
            for k in range(j + 1, n):
                expo += _cross_at(model, grid, eps, phis[j], phis[k], points[j] - points[k])[:, 0]
        _check_exponent(expo, "moment")
        return np.exp(expo)

    vals = np.concatenate(ordered_map(run, _chunks(n_samples, chunk)))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def rho_estimate(model: CovarianceModel, t: float, s: float, z: float, n_pairs: int, eps: float,
                 grid: GridSpec, seed: int, n_steps=None, chunk=256, phi_method="cic"):
    """rho(z) = E exp(I_{t,s}(z)) - 1 with its Monte Carlo standard error."""
    mean, se = moment_mc(model, [t, s], [z, 0.0], n_pairs, eps, grid, seed, n_steps, chunk,
                         phi_method)
    return mean - 1.0, se


@dataclass(eq=False)
class RhoProfile:
    """Monte Carlo rho(z) on the grid lags with per-pair integrated functionals.

    ``overlap[p, i]`` is sum_z (2R_i - |z|)_+ (exp I_p(z) - 1) dz, ``total[p]`` the
    integral of exp I_p - 1 and ``centred[p]`` that of exp I_p - I_p - 1.
    """

    t: float
    s: float
    eps: float
    grid: GridSpec
    z: np.ndarray = field(repr=False)
    mean: np.ndarray = field(repr=False)
    se: np.ndarray = field(repr=False)
    R: tuple
    overlap: np.ndarray = field(repr=False)
    total: np.ndarray = field(repr=False)
    centred: np.ndarray = field(repr=False)

    @property
    def n_pairs(self) -> int:
        return self.total.size


def overlap_kernel(z, R):
    return np.clip(2.0 * R - np.abs(z), 0.0, None)


def rho_profile(model: CovarianceModel, t: float, s: float, n_pairs: int, eps: float,
                grid: GridSpec, seed: int, R_list=(), n_steps=None, chunk=128,
                phi_method="cic") -> RhoProfile:
    """Estimate rho on every grid lag from ``n_pairs`` independent path pairs."""
    z = grid.x
    dx = grid.dx
    R_list = tuple(float(r) for r in R_list)
    ov = np.stack([overlap_kernel(z, r) * dx for r in R_list]) if R_list else np.zeros((0, z.size))
    horizon = max(t, s)
    steps = time_steps(horizon, eps) if n_steps is None else n_steps

    def run(job):
        c, size = job
        e1 = sample_ensemble(horizon, steps, size, seed_derive(seed, "rho", c, 1))
        e2 = sample_ensemble(horizon, steps, size, seed_derive(seed, "rho", c, 2))
        prof = cross_profile(model, grid, eps, e1.phi(grid, t, phi_method),
                             e2.phi(grid, s, phi_method))
        _check_exponent(prof, "correlation")
        ex = np.expm1(prof)
        return (ex.sum(axis=0), (ex * ex).sum(axis=0), ex @ ov.T, ex.sum(axis=1) * dx,
                (ex - prof).sum(axis=1) * dx)

    parts = ordered_map(run, _chunks(n_pairs, chunk))
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n_pairs
    var = np.maximum(s2 / n_pairs - mean**2, 0.0) * n_pairs / max(n_pairs - 1, 1)
    return RhoProfile(float(t), float(s), float(eps), grid, z, mean, np.sqrt(var / n_pairs),
                      R_list, np.concatenate([p[2] for p in parts]),
                      np.concatenate([p[3] for p in parts]),
                      np.concatenate([p[4] for p in parts]))
