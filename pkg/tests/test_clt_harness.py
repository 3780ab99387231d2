import json
import math
import warnings

import numpy as np
import pytest

from pamclt.clt_harness import (ExperimentPlan, _corrected_cov, _trapezoid_weights,
                                _trapezoid_weights_fast, build_report, loglog_slope,
                                normality_report, run_replicates, scaling_exponent,
                                spatial_average, variance_scan_mc, variance_scan_rho)
from pamclt.covariance_model import CovarianceModel
from pamclt.errors import (ConfigError, DegenerateFit, InsufficientReplicates,
                           InsufficientSamples, RangeError, TailWarning)
from pamclt.feynman_kac import RhoProfile, SolutionSample
from pamclt.field_synth import GridSpec
from pamclt.parallel import set_threads

INTEG = CovarianceModel.integrable()


def sample(values, x):
    return SolutionSample(x=x, values=values, halves=np.vstack([values, values]), t=1.0,
                          n_paths=2, eps=0.1, field_seed=0, path_seed=0)


def tiny_plan(**kw):
    args = dict(model=INTEG, t_list=(1.0,), R_list=(1.0, 2.0, 4.0, 8.0), grid=GridSpec(32.0, 1024),
                eps=0.25, n_replicates=100, n_paths=8, master_seed=5, n_pairs=64)
    args.update(kw)
    return ExperimentPlan(**args)


class TestSpatialAverage:
    x = np.linspace(-10, 10, 201)

    def test_unit_solution(self):
        assert spatial_average(sample(np.ones_like(self.x), self.x), 3.0) == 0.0

    def test_constant_shift(self):
        assert spatial_average(sample(np.full_like(self.x, 1.25), self.x), 3.3) == pytest.approx(2 * 3.3 * 0.25)

    def test_linear_profile_exact(self):
        # the trapezoid rule is exact for a linear integrand, including the interpolated ends
        v = 1.0 + 2.0 * self.x + 0.5
        assert spatial_average(sample(v, self.x), 2.37) == pytest.approx(2 * 2.37 * 0.5, rel=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(2, self.x.size))
        fa = spatial_average(sample(1 + a, self.x), 4.1)
        fb = spatial_average(sample(1 + b, self.x), 4.1)
        assert spatial_average(sample(1 + 2 * a - b, self.x), 4.1) == pytest.approx(2 * fa - fb)

    def test_unsorted_nodes(self):
        rng = np.random.default_rng(1)
        v = 1 + rng.normal(size=self.x.size)
        p = rng.permutation(self.x.size)
        assert spatial_average(sample(v[p], self.x[p]), 5.0) == pytest.approx(
            spatial_average(sample(v, self.x), 5.0), rel=1e-13)

    @pytest.mark.parametrize("R", [0.0, -1.0, 10.5])
    def test_range(self, R):
        with pytest.raises(RangeError):
            spatial_average(sample(np.ones_like(self.x), self.x), R)


@pytest.mark.parametrize("R", [1.0, 2.05, 3.33, 7.9])
def test_fast_trapezoid_weights(R):
    x = np.arange(-80, 81) * 0.1
    assert np.allclose(_trapezoid_weights_fast(x, R), _trapezoid_weights(x, R), atol=1e-14)
    assert _trapezoid_weights_fast(x, R).sum() == pytest.approx(2 * R)


class TestCorrectedCov:
    def test_jackknife_matches_brute_force(self):
        rng = np.random.default_rng(2)
        n = 150
        xa, xb, ya, yb = rng.normal(size=(4, n))
        x, y = (xa + xb) / 2 + 0.3 * ya, (ya + yb) / 2
        theta, se = _corrected_cov(x, y, xa, xb, ya, yb)
        est = lambda m: np.cov(x[m], y[m])[0, 1] - np.mean((xa[m] - xb[m]) * (ya[m] - yb[m])) / 4
        assert theta == pytest.approx(est(np.ones(n, bool)), rel=1e-12)
        loo = np.array([est(np.arange(n) != i) for i in range(n)])
        assert se == pytest.approx(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)), rel=1e-10)

    def test_removes_path_noise(self):
        rng = np.random.default_rng(3)
        n = 200_000
        signal = rng.normal(scale=2.0, size=n)
        a, b = signal + rng.normal(size=n), signal + rng.normal(size=n)
        theta, se = _corrected_cov((a + b) / 2, (a + b) / 2, a, b, a, b)
        assert abs(theta - 4.0) < 4 * se

    def test_needs_replicates(self):
        z = np.zeros(99)
        with pytest.raises(InsufficientReplicates):
            _corrected_cov(z, z, z, z, z, z)


class TestSlope:
    def test_exact_power_law(self):
        R = np.array([8, 16, 32, 64.0])
        fit = loglog_slope(R, 7 * R**1.5, np.zeros(4))
        assert fit.slope == pytest.approx(1.5, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(7), abs=1e-12)

    def test_wls_against_polyfit(self):
        R = np.array([2, 4, 8, 16, 32.0])
        y = 3 * R * np.exp([0.01, -0.02, 0.015, 0.0, -0.01])
        se = y * np.array([0.01, 0.02, 0.03, 0.04, 0.05])
        fit = loglog_slope(R, y, se)
        ref = np.polyfit(np.log(R), np.log(y), 1, w=1 / np.array([0.01, 0.02, 0.03, 0.04, 0.05]))
        assert fit.slope == pytest.approx(ref[0], rel=1e-12)
        assert fit.hi - fit.lo == pytest.approx(2 * 1.959963984540054 * fit.slope_se)

    def test_nonpositive(self):
        with pytest.raises(DegenerateFit):
            loglog_slope([1, 2, 4, 8], [1, 2, -1, 3], [0.1] * 4)
        with pytest.raises(DegenerateFit):
            loglog_slope([1, 2, 4], [1, 2, 3], [0.1] * 3)

    def test_exponents(self):
        assert scaling_exponent(CovarianceModel.riesz(0.5)) == 1.5
        assert scaling_exponent(CovarianceModel.rough(0.3)) == 1.0


class TestNormality:
    def test_gaussian_null(self):
        rng = np.random.default_rng(4)
        rep = normality_report({R: rng.normal(size=2000) for R in (8, 16, 32, 64)})
        assert max(rep.ks) < 0.05

    def test_constant_input(self):
        rep = normality_report({1.0: np.ones(1000), 2.0: np.ones(1000), 3.0: np.ones(1000)})
        assert rep.ks[0] == pytest.approx(0.8413, abs=1e-3)
        assert rep.kendall_tau == 0.0 and rep.trend_ok

    def test_trend(self):
        rng = np.random.default_rng(5)
        data = {R: rng.exponential(size=5000) * w + rng.normal(size=5000) * (1 - w)
                for R, w in ((1.0, 1.0), (2.0, 0.6), (4.0, 0.3), (8.0, 0.0))}
        rep = normality_report(data)
        assert rep.kendall_tau == -1.0

    def test_too_few(self):
        with pytest.raises(InsufficientSamples):
            normality_report({1.0: np.zeros(999)})


class TestRhoScan:
    def profile(self, mean, R=()):
        grid = GridSpec(32.0, 512)
        return RhoProfile(t=1.0, s=1.0, eps=0.1, grid=grid, z=grid.x, mean=mean,
                          se=np.full(grid.n_points, 1e-3), R=tuple(R), overlap=np.zeros((10, len(R))),
                          total=np.zeros(10), centred=np.zeros(10))

    def test_spike(self):
        mean = np.zeros(512)
        mean[0] = 2.0
        prof = self.profile(mean)
        for R, v, se in variance_scan_rho(INTEG, 1.0, [1.0, 2.0, 3.0, 4.0], prof):
            assert v == pytest.approx(2 * R * 2.0 * prof.grid.dx)

    @pytest.mark.filterwarnings("ignore::pamclt.errors.TailWarning")
    def test_triangle_weights(self):
        prof = self.profile(np.ones(512))
        R = 4.0
        (_, v, _), = variance_scan_rho(INTEG, 1.0, [R], prof)
        assert v == pytest.approx(4 * R * R, rel=1e-12)

    def test_stored_overlaps_take_precedence(self):
        prof = self.profile(np.zeros(512), R=(2.0,))
        prof.overlap[:, 0] = np.arange(10.0)
        (_, v, se), = variance_scan_rho(INTEG, 1.0, [2.0], prof)
        assert v == 4.5 and se == pytest.approx(np.arange(10.0).std(ddof=1) / math.sqrt(10))

    def test_tail_warning(self):
        with pytest.warns(TailWarning):
            variance_scan_rho(INTEG, 1.0, [1.0, 2.0, 4.0, 8.0], self.profile(np.ones(512)))


class TestPlan:
    @pytest.mark.parametrize("kw", [
        dict(R_list=(1.0, 2.0, 4.0)),
        dict(R_list=(1.0, 2.0, 2.0, 8.0)),
        dict(R_list=(1.0, 2.0, 3.0, 4.0)),
        dict(R_list=(2.0, 4.0, 8.0, 16.0)),
        dict(model=CovarianceModel.integrable(2)),
        dict(t_list=(0.0,)),
        dict(n_paths=1),
        dict(t_list=(1.0 / 3.0,)),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            tiny_plan(**kw)

    def test_horizon_and_times(self):
        p = tiny_plan(t_list=(1.0,), s_list=(0.5,))
        assert p.times == (0.5, 1.0) and p.horizon == 1.0


@pytest.fixture(scope="module")
def tiny_results():
    set_threads(1)
    return run_replicates(tiny_plan())


class TestReplicates:
    def test_shapes(self, tiny_results):
        assert tiny_results.F[1.0].shape == (100, 4)
        assert tiny_results.u0[1.0].shape == (100, 3)

    def test_halves_average(self, tiny_results):
        r = tiny_results
        assert np.allclose(r.F[1.0], (r.Fa[1.0] + r.Fb[1.0]) / 2, atol=1e-12)

    def test_thread_independent(self, tiny_results):
        set_threads(3)
        try:
            other = run_replicates(tiny_plan())
        finally:
            set_threads(1)
        assert np.array_equal(other.F[1.0], tiny_results.F[1.0])
        assert all(np.array_equal(other.cross[c], tiny_results.cross[c]) for c in other.cross)

    def test_too_few(self):
        with pytest.raises(InsufficientReplicates):
            variance_scan_mc(run_replicates(tiny_plan(n_replicates=20)))

    def test_report_serialises(self, tiny_results):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TailWarning)
            rep = build_report(tiny_results.plan, tiny_results, {}, {"version": "x"})
        d = json.loads(rep.to_json())
        assert d["normality"]["skipped"].startswith("100 samples")
        assert len(d["rows"]) == 4 and d["slope"]["1.0"]["target"] == 1.0
        assert rep.to_csv() == rep.to_csv()
        lines = rep.to_csv().split("\r\n")
        assert lines[0] == "# version=x" and lines[1].startswith("regime,t,s,R")
