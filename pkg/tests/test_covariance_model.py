import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pamclt.covariance_model import (CovarianceModel, TestFunction, c_h_constant, dalang_integral,
                                     gamma_at, inner_gagliardo, inner_spectral, lattice_weights,
                                     origin_weight, riesz_constant, riesz_constant_closed_form,
                                     spectral_density)
from pamclt.errors import ConfigError, DomainError, GridMismatch, UnsupportedRegime


def bump(c=0.0, w=0.7, L=12.0, n=2**11):
    return TestFunction.on_grid(lambda x: np.exp(-(x - c) ** 2 / (2 * w * w)), L, n)


class TestConstruction:
    @pytest.mark.parametrize("beta", [0.0, 1.0, 1.5, -0.2])
    def test_riesz_beta_outside_range_d1(self, beta):
        with pytest.raises(DomainError):
            CovarianceModel.riesz(beta)

    def test_riesz_d2_allows_beta_above_one(self):
        assert CovarianceModel.riesz(1.5, d=2).beta == 1.5

    @pytest.mark.parametrize("H", [0.25, 0.5, 0.1])
    def test_rough_H_range(self, H):
        with pytest.raises(DomainError):
            CovarianceModel.rough(H)

    def test_white_only_in_d1(self):
        with pytest.raises(DomainError):
            CovarianceModel("white", 2)

    def test_mapping_rejects_unknown_key(self):
        with pytest.raises(ConfigError, match="kernel"):
            CovarianceModel.from_mapping({"regime": "integrable", "kernel": "x"})

    def test_mapping_roundtrip(self):
        m = CovarianceModel.rough(0.3)
        assert CovarianceModel.from_mapping(m.to_dict()) == m


class TestKernel:
    def test_riesz_value(self):
        assert gamma_at(CovarianceModel.riesz(0.5), 4.0) == pytest.approx(0.5, abs=1e-15)

    def test_integrable_origin(self):
        assert gamma_at(CovarianceModel.integrable(), 0.0) == 1.0

    def test_riesz_origin_raises(self):
        with pytest.raises(DomainError):
            gamma_at(CovarianceModel.riesz(0.5), 0.0)

    @pytest.mark.parametrize("model", [CovarianceModel.white(), CovarianceModel.rough(0.3)])
    def test_no_pointwise_kernel(self, model):
        with pytest.raises(UnsupportedRegime):
            gamma_at(model, 1.0)


class TestSpectralDensity:
    def test_white(self):
        assert spectral_density(CovarianceModel.white(), 3.0) == pytest.approx(1 / (2 * math.pi))

    def test_rough_quarter_limit_constant(self):
        # c_H at H = 1/4 from the closed form, the model itself needs H > 1/4
        assert c_h_constant(0.25) == pytest.approx(0.0997356, abs=1e-6)
        assert spectral_density(CovarianceModel.rough(0.3), 1.0) == pytest.approx(c_h_constant(0.3))

    def test_c_h_high_precision(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 30
        H = mp.mpf("0.3")
        ref = mp.gamma(2 * H + 1) * mp.sin(mp.pi * H) / (2 * mp.pi)
        assert c_h_constant(0.3) == pytest.approx(float(ref), rel=1e-14)
        assert c_h_constant(0.49) > 0

    def test_c_h_domain(self):
        with pytest.raises(DomainError):
            c_h_constant(0.5)

    def test_riesz_singular_origin(self):
        with pytest.raises(DomainError):
            spectral_density(CovarianceModel.riesz(0.5), 0.0)

    @pytest.mark.parametrize("d,beta", [(1, 0.5), (1, 0.2), (2, 0.5), (2, 1.5), (3, 1.2)])
    def test_riesz_constant_probe_vs_closed_form(self, d, beta):
        assert riesz_constant(d, beta) == pytest.approx(riesz_constant_closed_form(d, beta), rel=1e-10)

    def test_riesz_constant_d1_half(self):
        assert riesz_constant(1, 0.5) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-10)

    def test_riesz_pair_on_gaussian_probe(self):
        # int |x|^-beta e^{-x^2} dx against int C|xi|^(beta-1) sqrt(pi) e^{-xi^2/4} dxi
        from scipy import integrate
        beta = 0.5
        lhs = 2 * integrate.quad(lambda x: x**-beta * math.exp(-x * x), 0, np.inf)[0]
        C = riesz_constant(1, beta)
        rhs = 2 * integrate.quad(lambda k: C * k ** (beta - 1) * math.sqrt(math.pi) * math.exp(-k * k / 4),
                                 0, np.inf)[0]
        assert lhs == pytest.approx(rhs, rel=1e-8)

    @given(st.floats(0.01, 50.0), st.sampled_from(["white", "integrable", "riesz", "rough"]))
    @settings(max_examples=40, deadline=None)
    def test_even(self, xi, regime):
        m = {"white": CovarianceModel.white(), "integrable": CovarianceModel.integrable(),
             "riesz": CovarianceModel.riesz(0.5), "rough": CovarianceModel.rough(0.3)}[regime]
        assert spectral_density(m, xi) == spectral_density(m, -xi)
        assert spectral_density(m, xi) >= 0


class TestLatticeWeights:
    def test_white_origin_is_trapezoid(self):
        m = CovarianceModel.white()
        assert origin_weight(m, 0.1) == pytest.approx(0.1 / (2 * math.pi), rel=1e-14)

    @pytest.mark.parametrize("model", [CovarianceModel.riesz(0.5), CovarianceModel.rough(0.3)])
    def test_lattice_sum_matches_integral(self, model):
        # int g(xi) e^{-xi^2} dxi in closed form vs the weighted lattice sum
        a, c = model.power_exponent, model.power_coefficient
        exact = c * math.gamma((a + 1) / 2)
        dxi = 0.01
        xi = dxi * np.arange(-4000, 4001)
        approx = np.sum(lattice_weights(model, xi, dxi) * np.exp(-xi * xi))
        assert approx == pytest.approx(exact, rel=1e-6)


class TestDalang:
    def test_white(self):
        assert dalang_integral(CovarianceModel.white()) == pytest.approx(0.5, abs=1e-8)

    def test_integrable_below_one(self):
        from scipy import integrate
        v = dalang_integral(CovarianceModel.integrable())
        ref = integrate.quad(lambda x: math.exp(-x * x / 2) / math.sqrt(2 * math.pi) / (1 + x * x),
                             -np.inf, np.inf)[0]
        assert v < 1 and v == pytest.approx(ref, rel=1e-9)

    def test_riesz_closed(self):
        # 2C int_0^inf r^(beta-1)/(1+r^2) dr = C pi / sin(pi beta / 2)
        beta = 0.5
        v = dalang_integral(CovarianceModel.riesz(beta))
        assert v == pytest.approx(riesz_constant(1, beta) * math.pi / math.sin(math.pi * beta / 2), rel=1e-9)

    def test_rough_finite(self):
        v = dalang_integral(CovarianceModel.rough(0.3))
        a = 0.4
        assert v == pytest.approx(c_h_constant(0.3) * math.pi / math.cos(math.pi * a / 2), rel=1e-9)

    def test_integrable_d2(self):
        assert 0 < dalang_integral(CovarianceModel.integrable(2)) < np.inf


class TestInnerProducts:
    def test_zero(self):
        z = TestFunction(np.zeros(64), 0.0, 0.1)
        assert inner_spectral(z, z, CovarianceModel.rough(0.3)) == 0.0

    def test_white_is_l2(self):
        f = bump()
        l2 = np.sum(f.values**2) * f.dx
        assert inner_spectral(f, f, CovarianceModel.white()) == pytest.approx(l2, rel=1e-10)

    def test_integrable_direct_double_sum(self):
        f, g = bump(0.0, 0.6, 8.0, 2**9), bump(0.7, 0.9, 8.0, 2**9)
        x = f.x
        gam = np.exp(-0.5 * (x[:, None] - x[None, :]) ** 2)
        direct = f.values @ gam @ g.values * f.dx**2
        assert inner_spectral(f, g, CovarianceModel.integrable()) == pytest.approx(direct, rel=1e-9)

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            inner_spectral(bump(n=2**10), bump(n=2**11), CovarianceModel.white())

    def test_boundary_must_vanish(self):
        with pytest.raises(DomainError):
            TestFunction(np.ones(16), 0.0, 0.1)

    @given(st.floats(-2, 2), st.floats(0.4, 1.2), st.floats(-2, 2), st.floats(0.4, 1.2),
           st.sampled_from([0.26, 0.3, 0.45]))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_and_positivity(self, c1, w1, c2, w2, H):
        m = CovarianceModel.rough(H)
        f, g = bump(c1, w1), bump(c2, w2)
        assert inner_spectral(f, g, m) == inner_spectral(g, f, m)
        assert inner_gagliardo(f, g, H) == inner_gagliardo(g, f, H)
        assert inner_spectral(f, f, m) >= 0

    @pytest.mark.parametrize("H", [0.26, 0.3, 0.4, 0.49])
    def test_gagliardo_matches_spectral(self, H):
        m = CovarianceModel.rough(H)
        f, g = bump(0.0, 0.5, 16.0, 2**12), bump(0.5, 0.7, 16.0, 2**12)
        for a, b in ((f, f), (f, g)):
            assert inner_gagliardo(a, b, H) == pytest.approx(inner_spectral(a, b, m), rel=1e-3)

    def test_gagliardo_domain(self):
        with pytest.raises(DomainError):
            inner_gagliardo(bump(), bump(), 0.2)
