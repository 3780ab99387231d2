import math

import numpy as np
import pytest
from scipy import stats

from pamclt.covariance_model import CovarianceModel, TestFunction, inner_spectral
from pamclt.errors import ConfigError, GridMismatch
from pamclt.field_synth import (GridSpec, dump_field, load_field, mollified_cov, mollified_cov_closed,
                                pair_field, periodic_cov, spectral_variances, synthesize)

MODELS = {
    "white": CovarianceModel.white(),
    "integrable": CovarianceModel.integrable(),
    "riesz": CovarianceModel.riesz(0.5),
    "rough": CovarianceModel.rough(0.3),
}
SMALL = GridSpec(16.0, 512)


def replicate_stack(model, grid, eps, n, base=1000):
    return np.stack([synthesize(model, grid, eps, base + i).real_samples for i in range(n)])


class TestGrid:
    def test_power_of_two(self):
        with pytest.raises(ConfigError):
            GridSpec(10.0, 1000)

    def test_frequencies(self):
        g = GridSpec(8.0, 64)
        assert g.dx == 0.25
        assert g.xi[1] == pytest.approx(math.pi / 8)
        assert g.xi_max == pytest.approx(math.pi / g.dx)
        assert g.x[0] == 0.0 and g.x.min() == -8.0

    def test_aliasing_guard(self):
        with pytest.raises(ConfigError, match="allow-aliasing"):
            SMALL.check_eps(1e-4)
        SMALL.check_eps(1e-4, allow_aliasing=True)


class TestSynthesis:
    @pytest.mark.parametrize("name", list(MODELS))
    def test_deterministic(self, name):
        a = synthesize(MODELS[name], SMALL, 0.05, 7)
        b = synthesize(MODELS[name], SMALL, 0.05, 7)
        c = synthesize(MODELS[name], SMALL, 0.05, 8)
        assert np.array_equal(a.real_samples, b.real_samples)
        assert not np.array_equal(a.real_samples, c.real_samples)

    def test_hermitian_expansion(self):
        f = synthesize(MODELS["rough"], SMALL, 0.05, 3)
        full = np.fft.ifft(f.full_coeffs()) * SMALL.n_points
        assert np.max(np.abs(full.imag)) < 1e-12
        assert np.allclose(full.real, f.real_samples, atol=1e-12)

    def test_every_u64_seed(self):
        synthesize(MODELS["white"], SMALL, 0.05, 2**64 - 1)
        synthesize(MODELS["white"], SMALL, 0.05, 0)

    def test_white_variance(self):
        eps = 0.01
        v = replicate_stack(MODELS["white"], SMALL, eps, 500)[:, 0]
        target = mollified_cov(MODELS["white"], eps, 0.0)
        assert target == pytest.approx(math.sqrt(math.pi / eps) / (2 * math.pi), rel=1e-8)
        se = np.std(v**2, ddof=1) / math.sqrt(v.size)
        assert abs(np.mean(v**2) - target) < 3 * se

    def test_rough_lag_covariance(self):
        eps = 0.05
        grid = GridSpec(32.0, 1024)
        fields = replicate_stack(MODELS["rough"], grid, eps, 400)
        for h in (0.0, 0.5, 1.0):
            shift = int(round(h / grid.dx))
            per_rep = np.mean(fields * np.roll(fields, -shift, axis=1), axis=1)
            se = np.std(per_rep, ddof=1) / math.sqrt(per_rep.size)
            assert abs(per_rep.mean() - mollified_cov(MODELS["rough"], eps, h)) < 3 * se

    def test_gaussian_marginals(self):
        eps = 0.05
        fields = replicate_stack(MODELS["integrable"], SMALL, eps, 2000)
        sd = math.sqrt(periodic_cov(MODELS["integrable"], SMALL, eps)[0])
        sites = np.arange(0, SMALL.n_points, 8)
        fails = sum(stats.kstest(fields[:, j] / sd, "norm").pvalue < 0.01 for j in sites)
        assert fails <= max(1, int(0.02 * sites.size))

    def test_stationarity(self):
        eps = 0.05
        fields = replicate_stack(MODELS["riesz"], SMALL, eps, 1000)
        shift = 8
        prods = fields * np.roll(fields, -shift, axis=1)
        ref = periodic_cov(MODELS["riesz"], SMALL, eps)[shift]
        means = prods[:, ::32].mean(axis=0)
        ses = prods[:, ::32].std(axis=0, ddof=1) / math.sqrt(fields.shape[0])
        assert np.all(np.abs(means - ref) <= 4 * ses)


class TestPairing:
    def phi(self, c, w, grid=SMALL):
        x = grid.x
        return grid.transform(np.exp(-(x - c) ** 2 / (2 * w * w)))

    def test_zero_and_linearity(self):
        f = synthesize(MODELS["rough"], SMALL, 0.05, 11)
        c1, c2 = self.phi(0.0, 0.5), self.phi(1.0, 0.8)
        assert pair_field(f, np.zeros(SMALL.n_freq)) == 0.0
        assert pair_field(f, 2.5 * c1 + c2) == pytest.approx(2.5 * pair_field(f, c1) + pair_field(f, c2),
                                                           rel=1e-13)

    def test_grid_mismatch(self):
        f = synthesize(MODELS["white"], SMALL, 0.05, 1)
        with pytest.raises(GridMismatch):
            pair_field(f, np.zeros(10))

    def test_pair_matches_real_space_sum(self):
        f = synthesize(MODELS["integrable"], SMALL, 0.05, 5)
        x = SMALL.x
        vals = np.exp(-(x - 0.3) ** 2 / 0.5)
        direct = np.sum(vals * f.real_samples) * SMALL.dx
        assert pair_field(f, SMALL.transform(vals)) == pytest.approx(direct, rel=1e-10)

    @pytest.mark.parametrize("name", ["integrable", "rough"])
    def test_isometry(self, name):
        model, eps = MODELS[name], 0.05
        c1, c2 = self.phi(0.0, 0.6), self.phi(0.8, 0.9)
        prods = []
        for i in range(1500):
            f = synthesize(model, SMALL, eps, 5000 + i)
            prods.append(pair_field(f, c1) * pair_field(f, c2))
        prods = np.array(prods)
        var = spectral_variances(model, SMALL, eps)
        oracle = np.sum(SMALL.multiplicity * var * (np.conj(c1) * c2).real)
        assert abs(prods.mean() - oracle) < 3 * prods.std(ddof=1) / math.sqrt(prods.size)

    def test_discrete_oracle_vs_inner_product(self):
        # undamped lattice form vs the 4x zero-padded spectral sum
        model = MODELS["rough"]
        grid = GridSpec(16.0, 2**12)
        bump = lambda c, w: (lambda x: np.exp(-(x - c) ** 2 / (2 * w * w)))
        v1, v2 = bump(0.0, 0.6)(grid.x), bump(0.8, 0.9)(grid.x)
        c1, c2 = grid.transform(v1), grid.transform(v2)
        var = spectral_variances(model, grid, 0.0)
        lattice = np.sum(grid.multiplicity * var * (np.conj(c1) * c2).real)
        f1 = TestFunction.on_grid(bump(0.0, 0.6), 16.0, 2**12)
        f2 = TestFunction.on_grid(bump(0.8, 0.9), 16.0, 2**12)
        assert lattice == pytest.approx(inner_spectral(f1, f2, model), rel=2e-4)


class TestMollifiedCov:
    @pytest.mark.parametrize("name", list(MODELS))
    @pytest.mark.parametrize("lag", [0.0, 0.3, 1.0, 4.0])
    def test_quadrature_vs_closed_form(self, name, lag):
        m = MODELS[name]
        assert mollified_cov(m, 0.05, lag) == pytest.approx(float(mollified_cov_closed(m, 0.05, lag)),
                                                             rel=1e-7, abs=1e-12)

    @pytest.mark.parametrize("name", list(MODELS))
    def test_symmetric(self, name):
        assert mollified_cov(MODELS[name], 0.1, 0.7) == mollified_cov(MODELS[name], 0.1, -0.7)

    def test_integrable_damping_limit(self):
        vals = [mollified_cov(MODELS["integrable"], e, 1.0) for e in (1.0, 100.0, 1e4)]
        assert vals[0] > vals[1] > vals[2] and vals[2] < 0.01

    @pytest.mark.parametrize("name", ["integrable", "riesz", "rough"])
    def test_periodic_cov_matches(self, name):
        m, grid, eps = MODELS[name], GridSpec(64.0, 2048), 0.05
        pc = periodic_cov(m, grid, eps)
        for j in (0, 5, 16):
            ref = mollified_cov(m, eps, grid.x[j])
            assert pc[j] == pytest.approx(ref, rel=2e-3, abs=2e-3 * abs(pc[0]))

    @pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
    def test_riesz_window_truncation_rate(self, beta):
        # measured, not assumed: the lag-0 deficit of the periodic field decays like L^-(2+beta)
        m, eps = CovarianceModel.riesz(beta), 0.05
        ref = mollified_cov(m, eps, 0.0)
        gaps = [ref - periodic_cov(m, GridSpec(L, int(32 * L)), eps)[0] for L in (32.0, 64.0, 128.0)]
        assert abs(gaps[0]) < 1e-5 * ref
        for a, b in zip(gaps, gaps[1:]):
            assert b / a == pytest.approx(2.0 ** -(2 + beta), rel=1e-3)


def test_dump_roundtrip(tmp_path):
    f = synthesize(MODELS["rough"], SMALL, 0.05, 2**63 + 5)
    path = tmp_path / "field.pamf"
    dump_field(f, path)
    header, samples = load_field(path)
    assert header["regime"] == "rough" and header["param"] == 0.3
    assert header["seed"] == 2**63 + 5 and header["n_points"] == SMALL.n_points
    assert header["L"] == 16.0 and header["eps"] == 0.05
    assert np.array_equal(samples, f.real_samples)
    assert path.stat().st_size == 4 + 2 + 16 + 4 + 8 + 8 + 4 + 8 + 8 + 8 * SMALL.n_points
