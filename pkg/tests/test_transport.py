import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import fd_grad
from transport_samplers.distributions import (
    Banana,
    DimensionError,
    Funnel,
    Gaussian,
    IllConditionedGaussian,
    StandardNormal,
    TwoMode1D,
)
from transport_samplers.theory import bilip_lower_bound_analytic
from transport_samplers.transport import (
    BananaFlow,
    Bogachev1DMap,
    Bogachev2DMap,
    FunnelFlow,
    IdentityMap,
    InterpolatedGaussianFlow,
    LinearMap,
    PushBackward,
    PushForward,
    SmoothedBogachev1DMap,
    bilip_lower_bound_empirical,
    pushbackward_condition_number,
    push_backward_logpdf,
    push_forward_logpdf,
    tabulate_map,
)

ANALYTIC = [
    lambda: IdentityMap(3),
    lambda: LinearMap(np.array([[2.0, 0.3], [0.0, 0.5]]), np.array([1.0, -1.0])),
    lambda: InterpolatedGaussianFlow(0.0, IllConditionedGaussian(4)),
    lambda: InterpolatedGaussianFlow(0.3, IllConditionedGaussian(4)),
    lambda: InterpolatedGaussianFlow(0.5, IllConditionedGaussian(4)),
    lambda: InterpolatedGaussianFlow(0.8, IllConditionedGaussian(4)),
    lambda: FunnelFlow(4, 3.0, 1.0),
    lambda: FunnelFlow.from_beta(4, 2.0),
    lambda: BananaFlow(4, 10.0, 0.02),
    lambda: Bogachev1DMap(2.0, 1.0, 1.0, "to_gaussian"),
    lambda: Bogachev1DMap(3.0, 0.5, 2.0, "to_mixture"),
    lambda: Bogachev2DMap(1.5),
    lambda: SmoothedBogachev1DMap(2.0),
]


def _log_det_fd(tmap, z, h=1e-6):
    """log |det J| by central differences of the forward map."""
    out = []
    for zi in z:
        cols = []
        for j in range(tmap.dim):
            e = np.zeros(tmap.dim)
            e[j] = h
            cols.append((tmap.forward(zi + e) - tmap.forward(zi - e)) / (2 * h))
        out.append(np.linalg.slogdet(np.stack(cols, axis=1))[1])
    return np.array(out)


@pytest.mark.parametrize("make", ANALYTIC)
def test_round_trip_and_log_det_antisymmetry(make):
    tmap = make()
    z = np.random.default_rng(3).standard_normal((1000, tmap.dim))
    x, ld = tmap.forward_and_log_det(z)
    z2, ldi = tmap.inverse_and_log_det(x)
    assert np.max(np.abs(z2 - z)) < 1e-8
    assert np.max(np.abs(ld + ldi)) < 1e-8


@pytest.mark.parametrize("make", ANALYTIC)
def test_log_det_matches_jacobian(make):
    tmap = make()
    z = 0.8 * np.random.default_rng(4).standard_normal((5, tmap.dim))
    np.testing.assert_allclose(tmap.log_det_forward(z), _log_det_fd(tmap, z), atol=1e-5)


@pytest.mark.parametrize("make", [m for m in ANALYTIC[:11]])
def test_pullback_score_matches_push_backward_gradient(make):
    tmap = make()
    target = StandardNormal(tmap.dim)
    z = 0.5 * np.random.default_rng(5).standard_normal((4, tmap.dim))
    pb = PushBackward(target, tmap)
    np.testing.assert_allclose(pb.grad_logpdf(z), fd_grad(pb.logpdf, z), rtol=1e-5, atol=1e-5)


def test_interpolated_flow_is_exact_at_half():
    target = IllConditionedGaussian(6)
    flow = InterpolatedGaussianFlow(0.5, target)
    np.testing.assert_allclose(flow.matrix @ flow.matrix.T, target.cov, atol=1e-12)
    with pytest.raises(ValueError):
        InterpolatedGaussianFlow(1.5, target)


def test_funnel_flow_push_forward_is_target(rng):
    target = Funnel(4, 3.0, 1.0)
    x = target.sample(rng, 10)
    np.testing.assert_allclose(push_forward_logpdf(StandardNormal(4), FunnelFlow(4, 3.0, 1.0), x),
                               target.logpdf(x), rtol=1e-12)


def test_funnel_push_backward_covariance_is_diagonal_beta(rng):
    # the inverse of T_beta divides x_1 by sqrt(3 beta / beta), so the first
    # latent variance stays 1 while the others become beta
    beta = 2.0
    flow = FunnelFlow.from_beta(3, beta)
    z = flow.inverse(Funnel(3, 3.0, 1.0).sample(rng, 400_000))
    np.testing.assert_allclose(np.var(z, axis=0), [1.0, beta, beta], rtol=0.02)


def test_banana_flow_push_forward_is_target(rng):
    target = Banana(4, 10.0, 0.02)
    x = target.sample(rng, 10)
    np.testing.assert_allclose(push_forward_logpdf(StandardNormal(4), BananaFlow(4), x), target.logpdf(x),
                               rtol=1e-12)


def _mp_bogachev(x, a, s, st_):
    mp.mp.dps = 40
    cdf = 0.5 * mp.ncdf(x, -a, s) + 0.5 * mp.ncdf(x, a, s)
    return st_ * mp.sqrt(2) * mp.erfinv(2 * cdf - 1)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("sigma", [0.5, 1.0])
def test_bogachev_derivative_at_zero(a, sigma):
    tmap = Bogachev1DMap(a, sigma, 1.0)
    h = 1e-5
    fd = (tmap.forward(np.array([[h]])) - tmap.forward(np.array([[-h]])))[0, 0] / (2 * h)
    expected = (1.0 / sigma) * math.exp(-(a**2) / (2 * sigma**2))
    assert fd == pytest.approx(expected, rel=1e-4)
    assert tmap.derivative(np.zeros((1, 1)))[0, 0] == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("x", [-4.0, -1.3, 0.2, 2.5])
def test_bogachev_matches_high_precision_oracle(x):
    tmap = Bogachev1DMap(1.7, 0.8, 1.3)
    ref = float(_mp_bogachev(mp.mpf(x), mp.mpf(1.7), mp.mpf(0.8), mp.mpf(1.3)))
    assert tmap.forward(np.array([[x]]))[0, 0] == pytest.approx(ref, rel=1e-11, abs=1e-13)


def test_bogachev_far_tail_stays_finite():
    tmap = Bogachev1DMap(4.0, 1.0, 1.0)
    y = tmap.forward(np.array([[-40.0], [40.0]]))
    assert np.all(np.isfinite(y)) and y[0, 0] == -y[1, 0] and y[1, 0] > 20


def test_bogachev_push_backward_is_gaussian():
    tmap = Bogachev1DMap(3.0, 1.0, 1.0, "to_mixture")
    z = np.linspace(-5, 5, 41)[:, None]
    lp = PushBackward(TwoMode1D(3.0, 1.0), tmap).logpdf(z)
    np.testing.assert_allclose(lp, stats.norm.logpdf(z[:, 0]), atol=1e-9)


def test_bilip_bound_empirical_matches_analytic():
    for a in (0.5, 1.0, 2.0):
        emp = bilip_lower_bound_empirical(Bogachev1DMap(a, 1.0, 1.0))
        assert emp == pytest.approx(bilip_lower_bound_analytic(a, 1.0), rel=1e-6)
    with pytest.raises(ValueError):
        bilip_lower_bound_empirical(Bogachev1DMap(1.0, 1.0, 2.0))


def test_bogachev_2d_push_forward_is_gaussian(rng):
    a = 1.5
    tmap = Bogachev2DMap(a)
    x = np.concatenate([rng.standard_normal((2000, 2)) - a, rng.standard_normal((2000, 2)) + a])
    z = tmap.forward(x)
    for j in range(2):
        assert stats.kstest(z[:, j], "norm").pvalue > 1e-3
    assert abs(np.corrcoef(z.T)[0, 1]) < 0.05


def test_bogachev_2d_weights_sum_to_one():
    lw, lw1 = Bogachev2DMap(2.0).log_weights(np.linspace(-5, 5, 11))
    np.testing.assert_allclose(np.exp(lw) + np.exp(lw1), 1.0, rtol=1e-14)


def test_smoothed_bogachev_push_forward_has_spurious_bumps():
    tmap = SmoothedBogachev1DMap(3.0, direction="to_mixture")
    x = np.linspace(-8, 8, 4001)[:, None]
    p = np.exp(PushForward(StandardNormal(1), tmap).logpdf(x))
    n_max = int(np.sum((p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])))
    assert n_max > 2


def test_pushbackward_condition_number(rng):
    target = IllConditionedGaussian(16)
    res = pushbackward_condition_number(target, InterpolatedGaussianFlow(0.5, target), 400_000, rng)
    assert res.analytic == pytest.approx(1.0, abs=1e-8)
    assert res.empirical < 1.1
    res0 = pushbackward_condition_number(target, InterpolatedGaussianFlow(0.0, target), 10_000, rng)
    assert res0.analytic == pytest.approx(1e4, rel=1e-6)


def test_push_densities_dimension_mismatch():
    with pytest.raises(DimensionError):
        push_backward_logpdf(StandardNormal(3), IdentityMap(2), np.zeros((1, 2)))
    with pytest.raises(DimensionError):
        PushForward(StandardNormal(2), IdentityMap(3))


def test_push_forward_sampling_routes_agree(rng):
    base = Gaussian(np.zeros(2), np.array([[1.0, 0.3], [0.3, 0.5]]))
    pf = PushForward(base, FunnelFlow(2, 3.0, 1.0))
    x, lq = pf.sample_with_logpdf(rng, 20)
    np.testing.assert_allclose(lq, pf.logpdf(x), rtol=1e-10)
    xi = rng.standard_normal((20, 2))
    x2, lq2 = pf.sample_from_normals(xi)
    np.testing.assert_allclose(lq2, pf.logpdf(x2), rtol=1e-10)


def test_tabulate_map_columns():
    t = tabulate_map(Bogachev1DMap(2.0), np.array([-1.0, 0.0, 1.0]))
    assert t.shape == (3, 3)
    assert t[1, 1] == 0.0 and t[1, 2] == pytest.approx(-2.0)


@given(st.floats(0.0, 4.0), st.floats(0.3, 2.0), st.floats(0.3, 2.0), st.floats(-8, 8), st.floats(-8, 8))
def test_bogachev_is_odd_and_monotone(a, sigma, sigma_tilde, y1, y2):
    tmap = Bogachev1DMap(a, sigma, sigma_tilde)
    f = tmap.forward(np.array([[y1], [y2], [-y1]]))[:, 0]
    assert f[0] == -f[2]
    if y1 < y2:
        assert f[0] <= f[1]


@given(st.floats(0.0, 4.0), st.floats(0.3, 2.0), st.floats(-6, 6))
def test_bogachev_round_trip_property(a, sigma, y):
    tmap = Bogachev1DMap(a, sigma, 1.0)
    pt = np.array([[y]])
    back = tmap.inverse(tmap.forward(pt))
    # deep between the modes T' is tiny and rounding in T is amplified by 1/T'
    slope = tmap.derivative(pt)[0, 0]
    assert back[0, 0] == pytest.approx(y, abs=1e-9 * max(1.0, abs(y)) + 1e-14 / slope)
