"""Desk-scale CLT experiments: variance scans by two routes, log-log slopes,
normality statistics and covariance limits."""

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .chaos_analytics import k_limit
from .covariance_model import CovarianceModel
from .errors import (ConfigError, DegenerateFit, InsufficientReplicates, InsufficientSamples,
                     RangeError, TailWarning)
from .feynman_kac import (RhoProfile, SolutionSample, point_weights, sample_ensemble,
                          time_steps, window_weights)
from .field_synth import GridSpec, synthesize
from .parallel import ordered_map
from .rng import seed_derive

SCHEMA_VERSION = 1
MIN_REPLICATES = 100
MIN_NORMALITY_SAMPLES = 1000
Z95 = 1.959963984540054
CSV_COLUMNS = ("regime", "t", "s", "R", "sigma2_mc", "se_mc", "sigma2_rho", "se_rho", "ks",
               "slope", "slope_lo", "slope_hi")


@dataclass(frozen=True)
class ExperimentPlan:
    model: CovarianceModel
    t_list: tuple
    R_list: tuple
    grid: GridSpec
    eps: float
    n_replicates: int
    n_paths: int
    master_seed: int
    s_list: tuple = ()
    n_pairs: int = 20000
    cross_points: tuple = ((1.0, 1.0, 0.0), (1.0, 0.5, 1.0))
    allow_aliasing: bool = False

    def __post_init__(self):
        R = [float(r) for r in self.R_list]
        if len(R) < 4:
            raise ConfigError("R_list needs at least 4 entries")
        if any(b <= a for a, b in zip(R, R[1:])) or R[0] <= 0:
            raise ConfigError("R_list must be positive and strictly increasing")
        if R[-1] < 8.0 * R[0] * (1 - 1e-12):
            raise ConfigError("R_list must span at least a factor 8")
        if R[-1] > self.grid.half_width / 4.0:
            raise ConfigError(f"max R = {R[-1]} exceeds L/4 = {self.grid.half_width / 4.0}")
        if self.model.d != 1:
            raise ConfigError("the CLT harness runs in d = 1")
        if not self.t_list or any(t <= 0 for t in self.t_list):
            raise ConfigError("t_list must hold positive times")
        if any(s <= 0 for s in self.s_list):
            raise ConfigError("s_list must hold positive times")
        if self.n_paths < 2 or self.n_replicates < 1 or self.n_pairs < 2:
            raise ConfigError("n_paths, n_pairs must be >= 2 and n_replicates >= 1")
        self.grid.check_eps(self.eps, self.allow_aliasing)
        steps = time_steps(self.horizon, self.eps)
        dt = self.horizon / steps
        for tau in self.times + tuple(c[1] for c in self.cross_points):
            if abs(tau / dt - round(tau / dt)) > 1e-6:
                raise ConfigError(f"time {tau} is not a multiple of the step {dt:g}")

    @property
    def times(self):
        return tuple(sorted(set(float(v) for v in tuple(self.t_list) + tuple(self.s_list))))

    @property
    def horizon(self):
        return max(self.times + tuple(max(c[0], c[1]) for c in self.cross_points))


def spatial_average(sample: SolutionSample, R: float, values=None) -> float:
    """Trapezoid integral of (u - 1) over [-R, R] (linear interpolation at the ends)."""
    x = np.asarray(sample.x)
    v = np.asarray(sample.values if values is None else values)
    order = np.argsort(x, kind="stable")
    return _trapezoid_window(x[order], v[order] - 1.0, R)


def _trapezoid_window(x, f, R):
    if R <= 0:
        raise RangeError("R must be positive")
    if R > -x[0] + 1e-9 or R > x[-1] + 1e-9:
        raise RangeError(f"R = {R} outside the sampled window")
    xs = np.concatenate(([-R], x[(x > -R) & (x < R)], [R]))
    fs = np.interp(xs, x, f)
    return float(np.sum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs)))


def _trapezoid_weights(x, R):
    """Weights w with sum w f(x) equal to the interpolated trapezoid rule on [-R, R]."""
    w = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = 1.0
        w[i] = _trapezoid_window(x, e, R)
    return w


# -- replicate loop ---------------------------------------------------------------

@dataclass
class ReplicateResults:
    """Per-replicate scalars: F[t] has shape (n_rep, n_R); halves Fa, Fb likewise."""

    plan: ExperimentPlan
    F: dict
    Fa: dict
    Fb: dict
    u0: dict
    cross: dict


def _one_replicate(plan: ExperimentPlan, i: int, wts: np.ndarray):
    model, grid = plan.model, plan.grid
    fld = synthesize(model, grid, plan.eps, seed_derive(plan.master_seed, "field", i),
                     plan.allow_aliasing)
    ens = sample_ensemble(plan.horizon, time_steps(plan.horizon, plan.eps), plan.n_paths,
                          seed_derive(plan.master_seed, "paths", i))
    half = plan.n_paths // 2
    out = {"F": {}, "Fa": {}, "Fb": {}, "u0": {}, "cross": {}}
    at_zero = {}
    for tau in plan.times:
        x, w = window_weights(fld, ens, max(plan.R_list), tau)
        dev = w - 1.0
        means = (dev.mean(axis=0), dev[:half].mean(axis=0), dev[half: 2 * half].mean(axis=0))
        out["F"][tau], out["Fa"][tau], out["Fb"][tau] = (m @ wts.T for m in means)
        mid = x.size // 2
        at_zero[tau] = w[:, mid]
        out["u0"][tau] = (w[:, mid].mean(), w[:half, mid].mean(), w[half: 2 * half, mid].mean())
    for (t, s, z) in plan.cross_points:
        a = at_zero[t] if t in at_zero else point_weights(fld, ens, 0.0, t)
        b = a if (s == t and z == 0.0) else point_weights(fld, ens, z, s)
        m = a.size
        out["cross"][(t, s, z)] = (a.sum() * b.sum() - np.dot(a, b)) / (m * (m - 1))
    return out


def run_replicates(plan: ExperimentPlan, progress=None) -> ReplicateResults:
    grid = plan.grid
    nr = int(math.floor(max(plan.R_list) / grid.dx + 1e-9))
    x = np.arange(-nr, nr + 1) * grid.dx
    wts = np.stack([_trapezoid_weights_fast(x, R) for R in plan.R_list])

    def job(i):
        res = _one_replicate(plan, i, wts)
        if progress is not None:
            progress(i)
        return res

    reps = ordered_map(job, range(plan.n_replicates))
    F = {tau: np.array([r["F"][tau] for r in reps]) for tau in plan.times}
    Fa = {tau: np.array([r["Fa"][tau] for r in reps]) for tau in plan.times}
    Fb = {tau: np.array([r["Fb"][tau] for r in reps]) for tau in plan.times}
    u0 = {tau: np.array([r["u0"][tau] for r in reps]) for tau in plan.times}
    cross = {c: np.array([r["cross"][c] for r in reps]) for c in plan.cross_points}
    return ReplicateResults(plan, F, Fa, Fb, u0, cross)


def _trapezoid_weights_fast(x, R):
    """Vectorised ``_trapezoid_weights`` for a uniform increasing grid."""
    dx = x[1] - x[0]
    w = np.zeros(x.size)
    inside = np.abs(x) < R - 1e-12 * dx
    w[inside] = dx
    k = np.flatnonzero(inside)
    if k.size == 0:
        return _trapezoid_weights(x, R)
    lo, hi = k[0], k[-1]
    # segment from -R to x[lo] and from x[hi] to R, linearly interpolated
    for edge, inner, outer in ((-R, lo, lo - 1), (R, hi, hi + 1)):
        gap = abs(x[inner] - edge)
        w[inner] += -0.5 * dx + 0.5 * gap
        if gap > 1e-12 * dx:
            theta = gap / dx  # position of the edge between outer and inner nodes
            w[inner] += 0.5 * gap * (1.0 - theta)
            w[outer] += 0.5 * gap * theta
    return w


# -- estimators ---------------------------------------------------------------------

def _corrected_cov(x, y, xa, xb, ya, yb):
    """cov(x, y) minus the path-noise term mean((xa-xb)(ya-yb))/4, with jackknife SE."""
    n = x.size
    if n < MIN_REPLICATES:
        raise InsufficientReplicates(f"{n} replicates < {MIN_REPLICATES}")
    d = (xa - xb) * (ya - yb)
    sx, sy, sxy, sd = x.sum(), y.sum(), np.dot(x, y), d.sum()
    theta = (sxy - sx * sy / n) / (n - 1) - sd / n / 4.0
    mx = (sx - x) / (n - 1)
    my = (sy - y) / (n - 1)
    cov_i = (sxy - x * y - (n - 1) * mx * my) / (n - 2)
    theta_i = cov_i - (sd - d) / (n - 1) / 4.0
    se = math.sqrt((n - 1) / n * np.sum((theta_i - theta_i.mean()) ** 2))
    return float(theta), float(se)


def variance_scan_mc(results: ReplicateResults, t: float = None, s: float = None):
    """Per-R path-corrected (co)variance of F_R(t), F_R(s): list of (R, value, se)."""
    plan = results.plan
    t = plan.t_list[0] if t is None else float(t)
    s = t if s is None else float(s)
    Ft, Fs = results.F[t], results.F[s]
    if Ft.shape[0] < MIN_REPLICATES:
        raise InsufficientReplicates(f"{Ft.shape[0]} replicates < {MIN_REPLICATES}")
    out = []
    for i, R in enumerate(plan.R_list):
        if np.ptp(Ft[:, i]) == 0.0:
            raise InsufficientReplicates(f"F_R values identical across replicates at R={R}")
        v, se = _corrected_cov(Ft[:, i], Fs[:, i], results.Fa[t][:, i], results.Fb[t][:, i],
                               results.Fa[s][:, i], results.Fb[s][:, i])
        out.append((float(R), v, se))
    return out


def variance_scan_rho(model: CovarianceModel, t: float, R_list, profile: RhoProfile):
    """sigma_R^2 = int rho(z) (2R - |z|)_+ dz per R: list of (R, value, se)."""
    z, mean = profile.z, profile.mean
    dx = profile.grid.dx
    zmax = 2.0 * max(R_list)
    edge = np.argmin(np.abs(np.abs(z) - zmax))
    centre = np.argmin(np.abs(z))
    if abs(mean[edge]) > 0.01 * abs(mean[centre]):
        warnings.warn(f"rho at |z|={zmax:g} is {mean[edge]:.3g}, above 1% of rho(0)={mean[centre]:.3g}",
                      TailWarning, stacklevel=2)
    out = []
    for R in R_list:
        R = float(R)
        if R in profile.R:
            per_pair = profile.overlap[:, profile.R.index(R)]
            out.append((R, float(per_pair.mean()),
                        float(per_pair.std(ddof=1) / math.sqrt(per_pair.size))))
        else:
            ov = np.clip(2.0 * R - np.abs(z), 0.0, None) * dx
            # pointwise errors added as if fully correlated: an upper bound
            out.append((R, float(np.dot(ov, mean)), float(np.dot(ov, profile.se))))
    return out


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    slope_se: float
    lo: float
    hi: float


def loglog_slope(R, sigma2, se) -> SlopeFit:
    """Weighted least squares of log sigma^2 on log R; var(log s2) = (se / s2)^2."""
    R, sigma2, se = (np.asarray(v, dtype=float) for v in (R, sigma2, se))
    if R.size < 4:
        raise DegenerateFit("need at least 4 points")
    if np.any(sigma2 <= 0) or np.any(~np.isfinite(sigma2)):
        raise DegenerateFit("non-positive variance estimate")
    x, y = np.log(R), np.log(sigma2)
    rel = se / sigma2
    if np.all(rel == 0):
        w = np.ones_like(x)
        scale = 0.0
    else:
        if np.any(rel <= 0):
            raise DegenerateFit("standard errors must be positive")
        w = 1.0 / rel**2
        scale = 1.0
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx == 0:
        raise DegenerateFit("all R equal")
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    slope_se = scale * math.sqrt(1.0 / sxx)
    return SlopeFit(float(slope), float(intercept), slope_se, float(slope - Z95 * slope_se),
                    float(slope + Z95 * slope_se))


@dataclass
class NormalityReport:
    R: list
    ks: list
    pvalues: list
    kendall_tau: float
    trend_ok: bool


def normality_report(samples: dict) -> NormalityReport:
    """KS distance of each normalised sample to N(0,1); trend flag is Kendall tau(R, KS) <= 0."""
    Rs = sorted(samples)
    ks, pv = [], []
    for R in Rs:
        v = np.asarray(samples[R], dtype=float)
        if v.size < MIN_NORMALITY_SAMPLES:
            raise InsufficientSamples(f"{v.size} samples at R={R} < {MIN_NORMALITY_SAMPLES}")
        res = stats.kstest(v, "norm")
        ks.append(float(res.statistic))
        pv.append(float(res.pvalue))
    tau = float(stats.kendalltau(Rs, ks).statistic) if len(Rs) > 1 else 0.0
    if not np.isfinite(tau):
        tau = 0.0
    return NormalityReport([float(r) for r in Rs], ks, pv, tau, tau <= 0.0)


def normalised_samples(results: ReplicateResults, t: float = None):
    """F_R / sqrt(mean F_R^2) per R (the mean of F_R is zero)."""
    t = results.plan.t_list[0] if t is None else float(t)
    F = results.F[t]
    return {float(R): F[:, i] / math.sqrt(np.mean(F[:, i] ** 2))
            for i, R in enumerate(results.plan.R_list)}


def scaling_exponent(model: CovarianceModel) -> float:
    """Theoretical order of sigma_R^2: d, or 2d - beta for Riesz."""
    return 2.0 * model.d - model.beta if model.regime == "riesz" else float(model.d)


def covariance_limit_report(model: CovarianceModel, t: float, s: float, results: ReplicateResults,
                            k_target=None):
    """Rows (R, Cov/R^a, se/R^a) with a the scaling exponent, and the K(t, s) target."""
    a = scaling_exponent(model)
    rows = [(R, v / R**a, se / R**a) for R, v, se in variance_scan_mc(results, t, s)]
    if k_target is None and model.regime == "riesz":
        k_target = k_limit(model, t, s)
    return rows, k_target


# -- report -----------------------------------------------------------------------

@dataclass
class CltReport:
    model: CovarianceModel
    rows: list
    slope: dict
    normality: dict
    k_limit: dict
    checks: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "model": self.model.to_dict(), "rows": self.rows,
                "slope": self.slope, "normality": self.normality, "k_limit": self.k_limit,
                "checks": self.checks, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}={self.metadata[key]}\r\n")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def build_report(plan: ExperimentPlan, results: ReplicateResults, profiles: dict,
                 metadata=None, cross_rho=None) -> CltReport:
    """Assemble a CltReport.

    ``profiles`` maps (t, s) to a RhoProfile (may be empty); ``cross_rho`` maps a
    cross point (t, s, z) to an independent (rho, se) for the moment check.
    """
    model = plan.model
    t0 = float(plan.t_list[0])
    rows = []
    try:
        norm = normality_report(normalised_samples(results, t0))
        ks_by_R = dict(zip(norm.R, norm.ks))
    except InsufficientSamples as exc:
        norm, ks_by_R = None, {}
        skipped = str(exc)
    slope_info, k_info, checks = {}, {}, {}
    for t in plan.t_list:
        t = float(t)
        mc = variance_scan_mc(results, t)
        fit = loglog_slope([r[0] for r in mc], [r[1] for r in mc], [r[2] for r in mc])
        slope_info[str(t)] = {"slope": fit.slope, "lo": fit.lo, "hi": fit.hi,
                              "se": fit.slope_se, "intercept": fit.intercept,
                              "target": scaling_exponent(model)}
        prof = profiles.get((t, t))
        rho = variance_scan_rho(model, t, plan.R_list, prof) if prof is not None else None
        for i, (R, v, se) in enumerate(mc):
            rows.append({"regime": model.regime, "t": t, "s": t, "R": R, "sigma2_mc": v,
                         "se_mc": se, "sigma2_rho": rho[i][1] if rho else None,
                         "se_rho": rho[i][2] if rho else None,
                         "ks": ks_by_R.get(R) if t == t0 else None,
                         "slope": fit.slope, "slope_lo": fit.lo, "slope_hi": fit.hi})
    for s in plan.s_list:
        s = float(s)
        for R, v, se in variance_scan_mc(results, t0, s):
            prof = profiles.get((t0, s))
            row = {"regime": model.regime, "t": t0, "s": s, "R": R, "sigma2_mc": v, "se_mc": se}
            if prof is not None:
                rr = variance_scan_rho(model, t0, [R], prof)[0]
                row.update(sigma2_rho=rr[1], se_rho=rr[2])
            rows.append(row)
    for (t, s), prof in sorted(profiles.items()):
        if model.regime == "riesz" or prof is not None:
            val, err = k_limit(model, t, s, prof)
            k_info[f"{t},{s}"] = {"value": val, "error": err}
    if model.regime == "riesz":
        for s in (t0,) + tuple(float(v) for v in plan.s_list):
            val, err = k_limit(model, t0, s)
            k_info[f"{t0},{s}"] = {"value": val, "error": err}
    for tau in plan.times:
        u = results.u0[tau][:, 0]
        checks[f"mean_u({tau},0)"] = {"value": float(u.mean()),
                                      "se": float(u.std(ddof=1) / math.sqrt(u.size))}
    for c, vals in results.cross.items():
        key = str(tuple(float(v) for v in c))
        entry = {"value": float(vals.mean()), "se": float(vals.std(ddof=1) / math.sqrt(vals.size))}
        if cross_rho and c in cross_rho:
            rho, rse = cross_rho[c]
            entry.update(one_plus_rho=1.0 + rho, rho_se=rse,
                         z_score=(entry["value"] - 1.0 - rho) / math.hypot(entry["se"], rse))
        checks["E_uu" + key] = entry
    if norm is None:
        normality = {"skipped": skipped}
    else:
        normality = {"R": norm.R, "ks": norm.ks, "pvalues": norm.pvalues,
                     "kendall_tau": norm.kendall_tau, "trend_ok": norm.trend_ok}
    return CltReport(model, rows, slope_info, normality, k_info, checks, dict(metadata or {}))
