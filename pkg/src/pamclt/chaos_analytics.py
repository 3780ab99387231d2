"""Chaos-expansion quantities: h_n, J_n, C_N / D_N, the series H, first-chaos
covariances and the limiting covariance K(t, s).

Notation. q(s) = int exp(-s |xi|^2) mu(dxi) and
Q(s, eta) = int exp(-s |xi + eta|^2) mu(dxi), so that

    h_n(t) = int_{gaps} prod_j q(g_j),
    J_2(t) = int_{gaps} q(g_1) E_{xi_1 ~ nu_{g_1}} Q(g_2, xi_1),

where the gaps g_j = t_{j+1} - t_j range over {g >= 0, sum g <= t} and nu_s is
the probability law proportional to exp(-s xi^2) mu(dxi). Gap vectors are drawn
from t * Dirichlet(1 - alpha, ..., 1 - alpha, 1) with alpha the small-s
exponent of q, which makes the h_n weight constant for power-law spectra.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import qmc

from .covariance_model import CovarianceModel, _sphere_area, density_radial
from .errors import DomainError, RangeError, UnsupportedRegime
from .feynman_kac import RhoProfile
from .quadrature import quad_checked

QMC_LOG2_POINTS = 14
QMC_SCRAMBLES = 8
H_MAX_ORDER = 4
J_MAX_ORDER = 3


# -- q and Q -----------------------------------------------------------------

def q_small_s_exponent(model: CovarianceModel) -> float:
    """alpha with q(s) ~ s^(-alpha) as s -> 0 (0 for integrable spectra)."""
    a = model.power_exponent
    if a is None:
        return 0.0
    return (a + model.d) / 2.0


def q_closed(model: CovarianceModel, s):
    """q(s) in closed form, vectorised over s > 0."""
    s = np.asarray(s, dtype=float)
    d = model.d
    if model.regime == "integrable":
        out = (1.0 + 2.0 * s) ** (-d / 2.0)
    else:
        alpha = q_small_s_exponent(model)
        out = model.power_coefficient * _sphere_area(d) * 0.5 * math.gamma(alpha) * s ** (-alpha)
    return float(out) if out.ndim == 0 else out


def q_quad(model: CovarianceModel, s: float) -> float:
    """q(s) by radial quadrature (oracle for ``q_closed``)."""
    if s <= 0:
        raise DomainError("q needs s > 0")
    d = model.d
    area = _sphere_area(d)
    a = model.power_exponent
    if a is None:
        f = lambda r: r ** (d - 1) * float(density_radial(model, r)) * math.exp(-s * r * r)
        return area * quad_checked(f, 0.0, np.inf, what="q(s)")[0]
    p = d - 1.0 + a
    head = quad_checked(lambda r: math.exp(-s * r * r), 0.0, 1.0, weight="alg", wvar=(p, 0.0),
                        what="q(s)")[0]
    tail = quad_checked(lambda r: r**p * math.exp(-s * r * r), 1.0, np.inf, what="q(s)")[0]
    return area * model.power_coefficient * (head + tail)


def big_q(model: CovarianceModel, s, eta):
    """Q(s, eta) = int exp(-s (xi + eta)^2) mu(dxi) in d = 1 (vectorised)."""
    if model.d != 1:
        raise UnsupportedRegime("Q(s, eta) is implemented for d = 1")
    s = np.asarray(s, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if model.regime == "integrable":
        return np.exp(-s * eta**2 / (1.0 + 2.0 * s)) / np.sqrt(1.0 + 2.0 * s)
    if model.regime == "white":
        return np.broadcast_to(q_closed(model, s), np.broadcast(s, eta).shape).copy()
    a = model.power_exponent
    return q_closed(model, s) * special.hyp1f1(-a / 2.0, 0.5, -s * eta**2)


def _tilted_sample(model, s, u_mag, u_sign):
    """Inverse-CDF draw from nu_s(dxi) ~ exp(-s xi^2) mu(dxi) (d = 1)."""
    a = model.power_exponent
    sign = np.where(u_sign < 0.5, -1.0, 1.0)
    if a is None:
        sd = 1.0 / np.sqrt(1.0 + 2.0 * s)
        return sign * sd * np.abs(special.ndtri(0.5 + 0.5 * u_mag))
    # xi^2 ~ Gamma((a+1)/2, scale 1/s)
    shape = (a + 1.0) / 2.0
    return sign * np.sqrt(special.gammaincinv(shape, u_mag) / s)


def _tilted_density(model, s, x):
    """Density of nu_s at x (d = 1)."""
    a = model.power_exponent
    if a is None:
        var = 1.0 / (1.0 + 2.0 * s)
        return np.exp(-0.5 * x * x / var) / np.sqrt(2.0 * np.pi * var)
    shape = (a + 1.0) / 2.0
    with np.errstate(divide="ignore"):
        return np.abs(x) ** a * np.exp(-s * x * x) * s**shape / special.gamma(shape)


# -- simplex sampling ---------------------------------------------------------

@dataclass
class Estimate:
    value: float
    error: float

    def as_tuple(self):
        return self.value, self.error


def _sobol_batches(dim, seed):
    for k in range(QMC_SCRAMBLES):
        eng = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng([seed, k]))
        u = eng.random_base2(QMC_LOG2_POINTS)
        yield np.clip(u, 1e-16, 1.0 - 1e-16)


def _gaps(model, n, t, u):
    """Gap vectors (m, n) from t * Dirichlet(1-alpha, ..., 1) and the h_n weight."""
    alpha = q_small_s_exponent(model)
    shape = 1.0 - alpha
    g = special.gammaincinv(np.array([shape] * n + [1.0]), u[:, : n + 1])
    gaps = t * g[:, :n] / g.sum(axis=1, keepdims=True)
    total = n * shape + 1.0
    # Dirichlet density of the first n coordinates, scaled to the t-simplex
    log_dens = (special.gammaln(total) - n * special.gammaln(shape) - (total - 1.0) * math.log(t)
                + (shape - 1.0) * np.log(gaps).sum(axis=1))
    weight = np.exp(np.log(q_closed(model, gaps)).sum(axis=1) - log_dens)
    return gaps, weight


def _check_order(n, cap):
    if not isinstance(n, (int, np.integer)) or n < 0:
        raise DomainError(f"chaos order must be a non-negative integer, got {n!r}")
    if n > cap:
        raise RangeError(f"order {n} above the supported cap {cap}")


def _scramble_stats(vals):
    vals = np.asarray(vals)
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)))


def h_n(model: CovarianceModel, n: int, t: float, seed: int = 0) -> Estimate:
    """h_n(t) by randomised QMC over the gap simplex; error from the scrambles."""
    _check_order(n, H_MAX_ORDER)
    if t < 0:
        raise DomainError("t must be non-negative")
    if n == 0:
        return Estimate(1.0, 0.0)
    if t == 0:
        return Estimate(0.0, 0.0)
    vals = [_gaps(model, n, t, u)[1].mean() for u in _sobol_batches(n + 1, seed)]
    return _scramble_stats(vals)


def h_n_closed(model: CovarianceModel, n: int, t: float) -> float:
    """Power-law spectra: a^n t^(n(1-alpha)) Gamma(1-alpha)^n / Gamma(1 + n(1-alpha))."""
    alpha = q_small_s_exponent(model)
    if model.power_exponent is None:
        raise UnsupportedRegime("closed form needs a power-law spectrum")
    a = q_closed(model, 1.0)
    b = 1.0 - alpha
    return a**n * t ** (n * b) * math.gamma(b) ** n / math.gamma(1.0 + n * b)


def h_n_recursive(model: CovarianceModel, n: int, t: float) -> float:
    """h_n(t) = int_0^t q(u) h_{n-1}(t-u) du by nested quadrature (oracle, n <= 3)."""
    _check_order(n, 3)
    if n == 0:
        return 1.0
    if t == 0:
        return 0.0
    alpha = q_small_s_exponent(model)
    if n == 1:
        if model.regime == "integrable" and model.d == 1:
            return math.sqrt(1.0 + 2.0 * t) - 1.0
        inner = lambda u: 1.0
    else:
        inner = lambda u: h_n_recursive(model, n - 1, t - u)
    if alpha > 0:
        # q(u) = c u^-alpha: algebraic weight at the left end
        c = q_closed(model, 1.0)
        return c * quad_checked(inner, 0.0, t, rel_tol=1e-9, weight="alg",
                                wvar=(-alpha, 0.0), what="h_n recursion")[0]
    f = lambda u: float(q_closed(model, u)) * inner(u)
    return quad_checked(f, 0.0, t, rel_tol=1e-9, what="h_n recursion")[0]


def j_n(model: CovarianceModel, n: int, t: float, seed: int = 0) -> Estimate:
    """J_n(t), n <= 3, on the same QMC nodes as h_n (d = 1)."""
    _check_order(n, J_MAX_ORDER)
    if model.d != 1:
        raise UnsupportedRegime("J_n is implemented for d = 1")
    if n == 0:
        return Estimate(1.0, 0.0)
    if t == 0:
        return Estimate(0.0, 0.0)
    dims = {1: 2, 2: 5, 3: 9}[n]
    vals = []
    for u in _sobol_batches(dims, seed):
        gaps, w = _gaps(model, n, t, u)
        if n >= 2:
            xi1 = _tilted_sample(model, gaps[:, 0], u[:, n + 1], u[:, n + 2])
            if n == 2:
                w = w * big_q(model, gaps[:, 1], xi1) / q_closed(model, gaps[:, 1])
            else:
                w = w * _j3_inner(model, gaps, xi1, u[:, 6:9])
        vals.append(w.mean())
    return _scramble_stats(vals)


def _j3_inner(model, gaps, xi1, u):
    """E over xi_2 of g(xi_2) exp(-g2 (xi1+xi2)^2) Q(g3, xi1+xi2), divided by q(g2) q(g3).

    xi_2 is drawn from an equal mixture of N(-xi1, 1/(2 g2)) and nu_{g2}.
    """
    g2, g3 = gaps[:, 1], gaps[:, 2]
    sd = 1.0 / np.sqrt(2.0 * g2)
    pick_gauss = u[:, 0] < 0.5
    gauss = -xi1 + sd * special.ndtri(u[:, 1])
    tilted = _tilted_sample(model, g2, u[:, 1], u[:, 2])
    xi2 = np.where(pick_gauss, gauss, tilted)
    dens = 0.5 * (np.exp(-((xi2 + xi1) ** 2) / (2.0 * sd**2)) / (sd * math.sqrt(2.0 * math.pi))
                  + _tilted_density(model, g2, xi2))
    eta = xi1 + xi2
    with np.errstate(divide="ignore", invalid="ignore"):
        num = density_radial(model, np.abs(xi2)) * np.exp(-g2 * eta**2) * big_q(model, g3, eta)
        ratio = np.where(dens > 0, num / dens, 0.0)
    return ratio / (q_closed(model, g2) * q_closed(model, g3))


# -- C_N, D_N and the series ---------------------------------------------------

def cn_dn(model: CovarianceModel, N: float):
    """C_N = int_{|xi|>N} |xi|^-2 mu(dxi), D_N = int_{|xi|<=N} mu(dxi)."""
    if N <= 0:
        raise DomainError("N must be positive")
    d = model.d
    area = _sphere_area(d)
    a = model.power_exponent
    if a is None:
        g = lambda r: float(density_radial(model, r))
        c = quad_checked(lambda r: r ** (d - 3) * g(r), N, np.inf, what="C_N")[0]
        dn = quad_checked(lambda r: r ** (d - 1) * g(r), 0.0, N, what="D_N")[0]
        return area * c, area * dn
    coef = model.power_coefficient
    p = d - 1.0 + a
    # C_N with r = N / v, v in (0, 1]: N^(p-1) v^-p dv
    c = N ** (p - 1.0) * quad_checked(lambda v: 1.0, 0.0, 1.0, weight="alg",
                                      wvar=(-p, 0.0), what="C_N")[0]
    dn = quad_checked(lambda r: 1.0, 0.0, N, weight="alg", wvar=(p, 0.0), what="D_N")[0]
    return area * coef * c, area * coef * dn


def hn_upper_bound(model: CovarianceModel, n: int, t: float, N: float) -> float:
    """sum_l binom(n, l) C_N^(n-l) (t D_N)^l / l!."""
    c, dn = cn_dn(model, N)
    return sum(math.comb(n, l) * c ** (n - l) * (t * dn) ** l / math.factorial(l)
               for l in range(n + 1))


@dataclass
class SeriesPartial:
    terms: list
    h_sums: list
    h_tilde_sums: list
    last_term: float
    last_ratio: float


def series_partial(model: CovarianceModel, t: float, gamma_scale: float, n_max: int,
                   seed: int = 0) -> SeriesPartial:
    """Partial sums of H = sum gamma^n h_n and H~ = sum sqrt(gamma^n h_n)."""
    _check_order(n_max, H_MAX_ORDER)
    terms = [gamma_scale**n * h_n(model, n, t, seed).value for n in range(n_max + 1)]
    h_sums = list(np.cumsum(terms))
    h_tilde = list(np.cumsum(np.sqrt(np.maximum(terms, 0.0))))
    ratio = terms[-1] / terms[-2] if n_max >= 1 and terms[-2] > 0 else 0.0
    return SeriesPartial(terms, h_sums, h_tilde, terms[-1], ratio)


@dataclass
class ChaosTable:
    model: CovarianceModel
    t: float
    h: dict = field(default_factory=dict)
    j: dict = field(default_factory=dict)
    cn_dn: dict = field(default_factory=dict)
    series: SeriesPartial = None

    def to_dict(self):
        out = {
            "model": self.model.to_dict(), "t": self.t,
            "h_n": {str(n): {"value": e.value, "error": e.error} for n, e in self.h.items()},
            "J_n": {str(n): {"value": e.value, "error": e.error} for n, e in self.j.items()},
            "C_N_D_N": {str(k): {"C_N": v[0], "D_N": v[1]} for k, v in self.cn_dn.items()},
        }
        if self.series is not None:
            out["series"] = {"terms": self.series.terms, "H": self.series.h_sums,
                             "H_tilde": self.series.h_tilde_sums,
                             "last_ratio": self.series.last_ratio}
        return out


def chaos_table(model: CovarianceModel, t: float, n_h=H_MAX_ORDER, n_j=J_MAX_ORDER,
                N_list=(1.0, 10.0), gamma_scale=1.0, seed: int = 0) -> ChaosTable:
    tab = ChaosTable(model, float(t))
    for n in range(1, n_h + 1):
        tab.h[n] = h_n(model, n, t, seed)
    if model.d == 1:
        for n in range(1, n_j + 1):
            tab.j[n] = j_n(model, n, t, seed)
    for N in N_list:
        tab.cn_dn[N] = cn_dn(model, N)
    tab.series = series_partial(model, t, gamma_scale, n_h, seed)
    return tab


# -- first chaos ------------------------------------------------------------------

def ell_r(R, xi):
    """sin^2(R xi) / (pi R xi^2), equal to R / pi at xi = 0."""
    if np.any(np.asarray(R) <= 0):
        raise DomainError("R must be positive")
    xi = np.asarray(xi, dtype=float)
    # sinc form keeps the removable singularity exact
    out = R / np.pi * np.sinc(R * xi / np.pi) ** 2
    return float(out) if out.ndim == 0 else out


def _sin2_moment(a):
    """int_0^inf sin^2(u) u^(a-2) du for -1 < a < 1."""
    head = quad_checked(lambda u: (math.sin(u) / u) ** 2 if u > 0 else 1.0, 0.0, 1.0,
                        weight="alg", wvar=(a, 0.0), what="sin^2 moment")[0]
    smooth = 0.5 / (1.0 - a)
    # -1/2 int_1^inf cos(2u) u^(a-2) du; QAWF takes an absolute tolerance only
    from scipy import integrate
    osc, err = integrate.quad(lambda u: u ** (a - 2.0), 1.0, np.inf, weight="cos", wvar=2.0,
                              epsabs=1e-13, limlst=200)
    return head + smooth - 0.5 * osc


def ell_r_mu_integral(model: CovarianceModel, R: float) -> float:
    """int ell_R(xi) mu(dxi) for power-law spectra in d = 1."""
    if R <= 0:
        raise DomainError("R must be positive")
    a = model.power_exponent
    if model.d != 1 or a is None:
        raise UnsupportedRegime("ell_R integral is implemented for power-law spectra in d = 1")
    # xi = u / R
    return 2.0 * model.power_coefficient * R ** (-a) / math.pi * _sin2_moment(a)


def _time_factor(t, x2):
    """int_0^t exp(-(t - r) x2 / 2) dr, stable near x2 = 0."""
    return t * special.exprel(-0.5 * t * x2) if t > 0 else 0.0


def first_chaos_cov(model: CovarianceModel, R: float, t: float, s: float) -> float:
    """Cov of the first-chaos parts of F_R(t), F_R(s):
    int 4 sin^2(R xi) / xi^2 a_t(xi) a_s(xi) mu(dxi), a_t = int_0^t exp(-(t-r) xi^2 / 2) dr."""
    if model.d != 1:
        raise UnsupportedRegime("first_chaos_cov is implemented for d = 1")
    if R <= 0:
        raise DomainError("R must be positive")
    if t < 0 or s < 0:
        raise DomainError("times must be non-negative")
    if t == 0 or s == 0:
        return 0.0
    a = model.power_exponent
    # eta = R xi; the envelope decays like eta^-6 beyond eta ~ R
    def env(eta):
        x2 = (eta / R) ** 2
        g = (model.power_coefficient * R ** (-a) if a is not None
             else float(density_radial(model, eta / R)))
        return 4.0 * R * _time_factor(t, x2) * _time_factor(s, x2) * g

    tol = dict(rel_tol=1e-9, abs_tol=0.0, what="first chaos covariance")
    sinc2 = lambda e: (math.sin(e) / e) ** 2 if e > 0 else 1.0
    upper = R * max(200.0, 60.0 / math.sqrt(min(t, s)))
    if a is not None:
        head = quad_checked(lambda e: env(e) * sinc2(e), 0.0, math.pi, weight="alg",
                            wvar=(a, 0.0), **tol)[0]
        power = lambda e: e**a
    else:
        head = quad_checked(lambda e: env(e) * sinc2(e), 0.0, math.pi, **tol)[0]
        power = lambda e: 1.0
    base = lambda e: env(e) * power(e) / (e * e)
    smooth = quad_checked(base, math.pi, upper, **tol)[0]
    osc = quad_checked(base, math.pi, upper, weight="cos", wvar=2.0,
                       rel_tol=1e-9, abs_tol=1e-12 * max(abs(smooth), 1e-300),
                       what="first chaos covariance")[0]
    # the cut at ``upper`` leaves < 1e-10 of the smooth part
    return 2.0 * (head + 0.5 * smooth - 0.5 * osc)


def norm_f1_squared(model: CovarianceModel, t: float) -> float:
    """||f_1(., x; t)||^2 = int a_t(xi)^2 mu(dxi) (d = 1)."""
    if model.d != 1:
        raise UnsupportedRegime("implemented for d = 1")
    a = model.power_exponent
    f = lambda x: _time_factor(t, x * x) ** 2
    if a is None:
        return 2.0 * quad_checked(lambda x: f(x) * float(density_radial(model, x)), 0.0, np.inf,
                                  what="norm of f_1")[0]
    c = model.power_coefficient
    head = quad_checked(f, 0.0, 1.0, weight="alg", wvar=(a, 0.0), what="norm of f_1")[0]
    tail = quad_checked(lambda x: f(x) * x**a, 1.0, np.inf, what="norm of f_1")[0]
    return 2.0 * c * (head + tail)


# -- limiting covariance ----------------------------------------------------------

def riesz_k_closed(beta: float, t: float = 1.0, s: float = 1.0) -> float:
    """t s int_{B_1^2} |x - x'|^-beta in d = 1: t s 2^(3-beta) / ((1-beta)(2-beta))."""
    if not 0 < beta < 1:
        raise DomainError("d = 1 Riesz closed form needs beta in (0, 1)")
    return t * s * 2.0 ** (3.0 - beta) / ((1.0 - beta) * (2.0 - beta))


def riesz_ball_integral(beta: float, d: int = 1) -> float:
    """int_{B_1 x B_1} |x - x'|^-beta by quadrature (nested 2-D in d = 1, lens radial in d = 2)."""
    tol = dict(rel_tol=1e-11, what="ball integral")
    if d == 1:
        def inner(x):
            # x' below and above x; the singularity sits at the shared endpoint
            lo = quad_checked(lambda y: 1.0, -1.0, x, weight="alg", wvar=(0.0, -beta), **tol)[0] \
                if x > -1.0 else 0.0
            hi = quad_checked(lambda y: 1.0, x, 1.0, weight="alg", wvar=(-beta, 0.0), **tol)[0] \
                if x < 1.0 else 0.0
            return lo + hi
        return quad_checked(inner, -1.0, 1.0, **tol)[0]
    if d == 2:
        lens = lambda r: 2.0 * math.acos(r / 2.0) - 0.5 * r * math.sqrt(max(4.0 - r * r, 0.0))
        val = quad_checked(lens, 0.0, 2.0, weight="alg", wvar=(1.0 - beta, 0.0), **tol)[0]
        return 2.0 * math.pi * val
    raise UnsupportedRegime("ball integral for d in {1, 2}")


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def k_limit(model: CovarianceModel, t: float, s: float, profile: RhoProfile = None):
    """K(t, s) with an error estimate.

    Riesz uses the ball integral (closed form in d = 1). Integrable and white need
    a ``RhoProfile``: K = omega_d int rho. Rough: K = 2 int E[e^I - I - 1].
    """
    if model.regime == "riesz":
        if model.d == 1:
            return riesz_k_closed(model.beta, t, s), 0.0
        return t * s * riesz_ball_integral(model.beta, model.d), 0.0
    if profile is None:
        raise DomainError(f"k_limit for the {model.regime} regime needs a rho profile")
    if (profile.t, profile.s) not in ((t, s), (s, t)):
        raise DomainError("profile times do not match (t, s)")
    if model.regime == "rough":
        per_pair = 2.0 * profile.centred
    else:
        per_pair = unit_ball_volume(model.d) * profile.total
    return float(per_pair.mean()), float(per_pair.std(ddof=1) / math.sqrt(per_pair.size))
