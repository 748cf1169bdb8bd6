import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from checks import invariance_target, invariance_zscores
from transport_samplers.distributions import Funnel, Gaussian, IllConditionedGaussian, StandardNormal, TwoMode1D
from transport_samplers.samplers import (
    ESS,
    HMC,
    IMH,
    ISIR,
    MALA,
    ChainEnsemble,
    Neutra,
    NeutraFlow,
    WeightedBatch,
    adapt_step_size,
    leapfrog,
    participation_ratio,
    run_ensemble,
    snis_estimate,
    spawn_streams,
)
from transport_samplers.transport import FunnelFlow, InterpolatedGaussianFlow, LinearMap, PushForward


def _kernels():
    target = invariance_target()
    wide = Gaussian(np.array([0.0]), np.array([[1.5**2]]))
    return {
        "mala": MALA(target, 0.5),
        "hmc": HMC(target, 0.3, 5),
        "ess": ESS(target),
        "imh": IMH(target, wide),
        "isir": ISIR(target, wide, 4),
        "neutra_mala": Neutra(target, LinearMap(np.array([[0.5]])), "mala", 0.7),
        "neutraflow": NeutraFlow(target, PushForward(StandardNormal(1), LinearMap(np.array([[1.3]]))), 4, 2,
                                 "mala", 0.5),
    }


@pytest.mark.parametrize("name", list(_kernels()))
def test_one_step_invariance(name):
    kernel = _kernels()[name]
    z_marg, z_bal = invariance_zscores(kernel, n=200_000, seed=1)
    assert z_marg < 3.5
    if name not in ("ess", "neutraflow"):
        assert z_bal < 3.5


def test_leapfrog_is_reversible():
    g = lambda x: -x  # noqa: E731
    x0, p0 = np.array([[0.3, -1.0]]), np.array([[0.7, 0.2]])
    x1, p1 = leapfrog(g, x0, p0, 0.1, 10)
    x2, p2 = leapfrog(g, x1, -p1, 0.1, 10)
    np.testing.assert_allclose(x2, x0, atol=1e-12)
    np.testing.assert_allclose(-p2, p0, atol=1e-12)


def test_imh_with_perfect_proposal_always_accepts(rng):
    target = IllConditionedGaussian(4)
    prop = PushForward(StandardNormal(4), InterpolatedGaussianFlow(0.5, target))
    kernel = IMH(target, prop)
    ens = ChainEnsemble.create(kernel, prop.sample(rng, 16), 0)
    res = run_ensemble(kernel, ens, 200)
    assert res.accepted.all()


def test_isir_refresh_rate_with_perfect_proposal(rng):
    target = StandardNormal(2)
    kernel = ISIR(target, StandardNormal(2), 5)
    ens = ChainEnsemble.create(kernel, rng.standard_normal((200, 2)), 1)
    res = run_ensemble(kernel, ens, 200)
    n = res.accepted.size
    assert abs(res.acceptance_rate - 0.8) < 3 * np.sqrt(0.8 * 0.2 / n)
    np.testing.assert_allclose(res.accept_prob, 0.8, atol=1e-12)


def test_imh_nan_ratio_rejects():
    class Empty(Gaussian):
        def _logpdf(self, x):
            return np.full(x.shape[:-1], -np.inf)

    kernel = IMH(Empty(np.zeros(1), np.eye(1)), StandardNormal(1))
    state = kernel.init_state(np.zeros((10, 1)))
    new, info = kernel.step(state, np.random.default_rng(0))
    assert not info.accepted.any()
    np.testing.assert_array_equal(new.x, state.x)


def test_isir_all_minus_inf_weights_stay_put():
    class Empty(Gaussian):
        def _logpdf(self, x):
            return np.full(x.shape[:-1], -np.inf)

    kernel = ISIR(Empty(np.zeros(1), np.eye(1)), StandardNormal(1), 3)
    state = kernel.init_state(np.ones((4, 1)))
    new, info = kernel.step(state, np.random.default_rng(0))
    np.testing.assert_array_equal(new.x, state.x)
    assert not info.accepted.any() and np.all(info.accept_prob == 0)
    with pytest.raises(ValueError):
        ISIR(StandardNormal(1), StandardNormal(1), 1)


def test_snis_estimates_mean_and_participation(rng):
    target = Gaussian(np.array([1.0]), np.array([[0.5]]))
    est, batch = snis_estimate(StandardNormal(1), target, 200_000, lambda x: x[:, 0], rng)
    assert est == pytest.approx(1.0, abs=0.02)
    pr = participation_ratio(batch)
    assert 1 <= pr <= 200_000
    assert participation_ratio(np.full(10, 0.1)) == pytest.approx(10.0)


def test_snis_support_mismatch_raises():
    with pytest.raises(ValueError, match="support"):
        WeightedBatch.from_log_weights(np.zeros((3, 1)), np.full(3, -np.inf))


def test_step_size_adaptation_reaches_target(rng):
    kernel = MALA(StandardNormal(10), 1e-3)
    state = kernel.init_state(rng.standard_normal((64, 10)))
    _, state = adapt_step_size(kernel, state, rng, 500, 0.75)
    ens = ChainEnsemble(state, spawn_streams(3, 64), np.zeros(64, dtype=int))
    res = run_ensemble(kernel, ens, 300)
    assert abs(res.accept_prob.mean() - 0.75) < 0.05


def test_adaptation_needs_a_step_size():
    with pytest.raises(ValueError):
        adapt_step_size(ESS(StandardNormal(1)), None, None, 1)


def test_neutra_with_exact_flow_samples_funnel(rng):
    target = Funnel(3, 3.0, 1.0)
    kernel = Neutra(target, FunnelFlow(3, 3.0, 1.0), "hmc", 0.5, 5)
    ens = ChainEnsemble.create(kernel, target.sample(rng, 32), 2)
    res = run_ensemble(kernel, ens, 400)
    x1 = res.samples[..., 0].ravel()
    # the latent target is N(0, I); x_1 = sqrt(3) z_1
    assert abs(np.var(x1) - 3.0) < 0.4
    assert res.acceptance_rate > 0.9


def test_neutraflow_with_zero_local_steps_is_isir():
    target = TwoMode1D(2.0)
    prop = PushForward(StandardNormal(1), LinearMap(np.array([[2.5]])))
    nf = NeutraFlow(target, prop, 5, 0)
    isir = ISIR(target, prop, 5)
    x0 = np.linspace(-3, 3, 8)[:, None]
    a, _ = nf.step(nf.init_state(x0), np.random.default_rng(7))
    b, _ = isir.step(isir.init_state(x0), np.random.default_rng(7))
    np.testing.assert_array_equal(a.x, b.x)


def test_ensemble_is_reproducible_and_independent_of_batching():
    target = StandardNormal(2)
    kernel = MALA(target, 0.4)
    x0 = np.zeros((6, 2))
    r1 = run_ensemble(kernel, ChainEnsemble.create(kernel, x0, 11), 50)
    r2 = run_ensemble(kernel, ChainEnsemble.create(kernel, x0, 11), 50)
    np.testing.assert_array_equal(r1.samples, r2.samples)
    # each chain owns its stream: chain 0 alone reproduces its trajectory
    streams = spawn_streams(11, 6)
    ens = ChainEnsemble(kernel.init_state(x0[:1]), streams[:1], np.zeros(1, dtype=int))
    np.testing.assert_array_equal(run_ensemble(kernel, ens, 50).samples[0], r1.samples[0])


def test_run_result_kept_discards_warmup():
    kernel = ESS(StandardNormal(1))
    res = run_ensemble(kernel, ChainEnsemble.create(kernel, np.zeros((2, 1)), 0), 11)
    assert res.kept().shape[1] == 5


@given(st.floats(0.05, 1.5), st.integers(0, 1000))
def test_mala_detailed_balance_property(step, seed):
    # reversibility: pi(x) P(x -> y) = pi(y) P(y -> x) for the MALA acceptance
    target = TwoMode1D(1.5, 0.7)
    kernel = MALA(target, step)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 1, 1)) * 2

    def log_flux(a, b):
        m = a + step * target.grad_logpdf(a)
        lq = -np.sum((b - m) ** 2) / (4 * step)
        st_a, st_b = kernel.init_state(a), kernel.init_state(b)
        mb = b + step * target.grad_logpdf(b)
        lq_back = -np.sum((a - mb) ** 2) / (4 * step)
        log_alpha = min(0.0, float(st_b.logp[0] - st_a.logp[0] + lq_back - lq))
        return float(st_a.logp[0]) + lq + log_alpha

    assert log_flux(x, y) == pytest.approx(log_flux(y, x), abs=1e-9)
