"""MCMC kernels, importance sampling and ensemble execution.

Every kernel advances a batch of ``K`` chains at once. The ``rng`` argument
is either a single ``numpy.random.Generator`` (one vectorized draw per
step, fastest) or a list of ``K`` generators, one per chain. With a list,
chain ``k`` only ever consumes its own stream, so its trajectory depends
only on (master seed, chain index, step index).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .distributions import StandardNormal, TargetDistribution
from .transport import PushBackward, TransportMap

ACCEPT_TOL = 1e-9


# ---------------------------------------------------------------------------
# RNG helpers


def _normal(rng, shape):
    if isinstance(rng, (list, tuple)):
        return np.stack([g.standard_normal(shape[1:]) for g in rng])
    return rng.standard_normal(shape)


def _uniform(rng, shape):
    if isinstance(rng, (list, tuple)):
        return np.stack([g.random(shape[1:]) for g in rng])
    return rng.random(shape)


def _gumbel(rng, shape):
    if isinstance(rng, (list, tuple)):
        return np.stack([g.gumbel(size=shape[1:]) for g in rng])
    return rng.gumbel(size=shape)


def _subset(rng, mask):
    """Restrict an RNG argument to the chains selected by ``mask``."""
    if isinstance(rng, (list, tuple)):
        return [g for g, m in zip(rng, mask) if m]
    return rng


def spawn_streams(seed, n: int) -> list:
    """Independent per-chain generators derived from a master seed (an int
    or a ``SeedSequence``)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def propose(proposal, rng, n_chains: int, n_per_chain: int):
    """Draw ``n_per_chain`` proposals per chain.

    Returns arrays of shape ``(K, n, d)`` and ``(K, n)`` with the points and
    their proposal log-densities.
    """
    d = proposal.dim
    if hasattr(proposal, "sample_from_normals"):
        xi = _normal(rng, (n_chains, n_per_chain, d))
        x, logq = proposal.sample_from_normals(xi.reshape(-1, d))
        return x.reshape(n_chains, n_per_chain, d), logq.reshape(n_chains, n_per_chain)
    if isinstance(rng, (list, tuple)):
        x = np.stack([proposal.sample(g, n_per_chain) for g in rng])
    else:
        x = proposal.sample(rng, n_chains * n_per_chain).reshape(n_chains, n_per_chain, d)
    return x, proposal.logpdf(x)


# ---------------------------------------------------------------------------
# Importance sampling


@dataclass
class WeightedBatch:
    samples: np.ndarray
    log_weights_raw: np.ndarray
    normalized_weights: np.ndarray

    @classmethod
    def from_log_weights(cls, samples, log_weights) -> "WeightedBatch":
        lw = np.asarray(log_weights, dtype=float)
        lw = np.where(np.isnan(lw), -np.inf, lw)
        if not np.any(np.isfinite(lw)):
            raise ValueError("proposal misses target support: all log-weights are -inf")
        return cls(np.asarray(samples), lw, np.exp(lw - logsumexp(lw)))


def snis_estimate(proposal, target: TargetDistribution, n: int, f, rng):
    """Self-normalized importance sampling estimate of ``E_target[f]``.

    Args:
        proposal: Distribution with ``sample`` and ``logpdf`` (for flows, a
            ``PushForward``).
        target: Target distribution, possibly unnormalized.
        n: Number of proposal draws.
        f: Function mapping ``(n, d)`` samples to ``(n, ...)`` values.
        rng: Generator.

    Returns:
        ``(estimate, WeightedBatch)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if hasattr(proposal, "sample_with_logpdf"):
        x, logq = proposal.sample_with_logpdf(rng, n)
    else:
        x = proposal.sample(rng, n)
        logq = proposal.logpdf(x)
    return snis_from_samples(x, logq, target, f)


def snis_from_samples(x, logq, target, f):
    batch = WeightedBatch.from_log_weights(x, target.logpdf(x) - logq)
    vals = np.asarray(f(batch.samples), dtype=float)
    est = np.tensordot(batch.normalized_weights, vals, axes=(0, 0))
    return est, batch


def participation_ratio(batch_or_weights) -> float:
    """``1 / sum w_i^2`` for self-normalized weights ``w``."""
    w = getattr(batch_or_weights, "normalized_weights", batch_or_weights)
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.sum(w * w))


# ---------------------------------------------------------------------------
# Kernels


@dataclass
class ChainState:
    """Batched state: positions ``x`` (K, d), log-density ``logp`` (K,) and
    kernel-specific cached quantities."""

    x: np.ndarray
    logp: np.ndarray
    grad: np.ndarray | None = None


@dataclass
class StepInfo:
    accepted: np.ndarray
    accept_prob: np.ndarray
    divergent: np.ndarray | None = None
    local_accept_prob: np.ndarray | None = None


class Kernel:
    """Markov kernel acting on a batch of chains."""

    name = "kernel"
    has_step_size = False

    def init_state(self, x) -> ChainState:
        raise NotImplementedError

    def step(self, state: ChainState, rng) -> tuple[ChainState, StepInfo]:
        raise NotImplementedError

    def to_sample(self, state: ChainState) -> np.ndarray:
        return state.x


def _mix(mask, new, old):
    if new.ndim == mask.ndim:
        return np.where(mask, new, old)
    return np.where(mask[:, None], new, old)


class MALA(Kernel):
    """Metropolis-adjusted Langevin: ``x' = x + g grad + sqrt(2 g) xi``."""

    name = "mala"
    has_step_size = True

    def __init__(self, target: TargetDistribution, step_size: float):
        if step_size <= 0:
            raise ValueError("step size must be positive")
        self.target, self.step_size = target, float(step_size)

    def _eval(self, x):
        logp = self.target.logpdf(x)
        finite = np.isfinite(logp)
        grad = np.zeros_like(x)
        if np.any(finite):
            grad[finite] = self.target.grad_logpdf(x[finite])
        return logp, grad

    def init_state(self, x):
        x = np.array(x, dtype=float)
        logp, grad = self._eval(x)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient at the initial state")
        return ChainState(x, logp, grad)

    def step(self, state, rng):
        g = self.step_size
        x, lp, gr = state.x, state.logp, state.grad
        k = x.shape[0]
        xi = _normal(rng, x.shape)
        log_u = np.log(_uniform(rng, (k,)))
        y = x + g * gr + math.sqrt(2.0 * g) * xi
        lp_y, gr_y = self._eval(y)
        ok = np.isfinite(lp_y)
        if not np.all(np.isfinite(gr_y[ok])):
            raise FloatingPointError("non-finite gradient in MALA proposal")
        fwd = -np.sum((y - x - g * gr) ** 2, axis=-1) / (4.0 * g)
        bwd = -np.sum((x - y - g * gr_y) ** 2, axis=-1) / (4.0 * g)
        log_a = np.where(ok, lp_y - lp + bwd - fwd, -np.inf)
        acc = log_u < log_a
        prob = np.exp(np.minimum(0.0, log_a))
        return ChainState(_mix(acc, y, x), _mix(acc, lp_y, lp), _mix(acc, gr_y, gr)), StepInfo(acc, prob)


def leapfrog(grad_fn, x, p, step_size, n_steps):
    """Unit-mass leapfrog; returns the end point and momentum."""
    p = p + 0.5 * step_size * grad_fn(x)
    for i in range(n_steps):
        x = x + step_size * p
        if i < n_steps - 1:
            p = p + step_size * grad_fn(x)
    p = p + 0.5 * step_size * grad_fn(x)
    return x, p


class HMC(Kernel):
    """Hamiltonian Monte Carlo with identity mass and ``n_leapfrog`` steps.

    Trajectories that produce non-finite energies are rejected and flagged
    as divergent.
    """

    name = "hmc"
    has_step_size = True

    def __init__(self, target: TargetDistribution, step_size: float, n_leapfrog: int = 8):
        if step_size <= 0 or n_leapfrog < 1:
            raise ValueError("need step_size > 0 and n_leapfrog >= 1")
        self.target, self.step_size, self.n_leapfrog = target, float(step_size), int(n_leapfrog)

    def init_state(self, x):
        x = np.array(x, dtype=float)
        return ChainState(x, self.target.logpdf(x))

    def step(self, state, rng):
        x, lp = state.x, state.logp
        k = x.shape[0]
        p0 = _normal(rng, x.shape)
        log_u = np.log(_uniform(rng, (k,)))
        with np.errstate(over="ignore", invalid="ignore"):
            y, p1 = leapfrog(self.target.grad_logpdf, x, p0, self.step_size, self.n_leapfrog)
            lp_y = self.target.logpdf(y)
            log_a = lp_y - lp - 0.5 * np.sum(p1 * p1, axis=-1) + 0.5 * np.sum(p0 * p0, axis=-1)
        divergent = ~np.isfinite(log_a)
        log_a = np.where(divergent, -np.inf, log_a)
        acc = log_u < log_a
        prob = np.exp(np.minimum(0.0, log_a))
        return ChainState(_mix(acc, y, x), _mix(acc, lp_y, lp)), StepInfo(acc, prob, divergent)


class ESS(Kernel):
    """Elliptical slice sampling with an N(0, I) prior.

    The target is written as ``N(0, I) * exp(residual)``; by default the
    residual is ``target.logpdf - log N(0, I)``. ``residual`` may be given
    directly for a likelihood with a Gaussian prior.
    """

    name = "ess"
    max_shrink = 1000

    def __init__(self, target: TargetDistribution | None = None, residual=None, dim: int | None = None):
        if residual is None:
            if target is None:
                raise ValueError("give a target or a residual log-likelihood")
            normal = StandardNormal(target.dim)
            residual = lambda x: target.logpdf(x) - normal.logpdf(x)  # noqa: E731
        self.target = target
        self.residual = residual
        self.dim = target.dim if target is not None else dim

    def init_state(self, x):
        x = np.array(x, dtype=float)
        return ChainState(x, self.residual(x))

    def step(self, state, rng):
        x, ll = state.x, state.logp
        k = x.shape[0]
        nu = _normal(rng, x.shape)
        log_y = ll + np.log(_uniform(rng, (k,)))
        theta = 2.0 * math.pi * _uniform(rng, (k,))
        lo, hi = theta - 2.0 * math.pi, theta.copy()
        new_x, new_ll = x.copy(), ll.copy()
        active = np.ones(k, dtype=bool)
        first_try = np.zeros(k, dtype=bool)
        for it in range(self.max_shrink + 1):
            idx = np.flatnonzero(active)
            th = theta[idx, None]
            prop = x[idx] * np.cos(th) + nu[idx] * np.sin(th)
            lp = self.residual(prop)
            ok = lp > log_y[idx]
            new_x[idx[ok]] = prop[ok]
            new_ll[idx[ok]] = lp[ok]
            if it == 0:
                first_try[idx[ok]] = True
            active[idx[ok]] = False
            if not np.any(active):
                break
            rej = idx[~ok]
            below = theta[rej] < 0
            lo[rej] = np.where(below, theta[rej], lo[rej])
            hi[rej] = np.where(below, hi[rej], theta[rej])
            sub = _subset(rng, active)
            u = _uniform(sub, (len(rej),))
            theta[rej] = lo[rej] + (hi[rej] - lo[rej]) * u
        else:
            raise RuntimeError("elliptical slice shrinkage exceeded 1000 iterations")
        # ESS always moves; accept_prob records whether the first angle was kept
        moved = np.ones(k, dtype=bool)
        return ChainState(new_x, new_ll), StepInfo(moved, first_try.astype(float))


class IMH(Kernel):
    """Independent Metropolis-Hastings with a fixed proposal.

    The state caches the log importance weight ``log pi - log q``. A move is
    accepted when ``log u < dw`` or ``dw >= -1e-9``; a proposal and a state
    that both have weight ``-inf`` give an undefined ratio, which is
    rejected.
    """

    name = "imh"

    def __init__(self, target: TargetDistribution, proposal):
        self.target, self.proposal = target, proposal

    def init_state(self, x):
        x = np.array(x, dtype=float)
        lp = self.target.logpdf(x)
        return ChainState(x, lp, lp - self.proposal.logpdf(x))

    def step(self, state, rng):
        k = state.x.shape[0]
        y, logq = propose(self.proposal, rng, k, 1)
        y, logq = y[:, 0], logq[:, 0]
        log_u = np.log(_uniform(rng, (k,)))
        lp_y = self.target.logpdf(y)
        lw_y = lp_y - logq
        with np.errstate(invalid="ignore"):
            delta = lw_y - state.grad
        delta = np.where(np.isnan(delta), -np.inf, delta)
        acc = (delta >= -ACCEPT_TOL) | (log_u < delta)
        prob = np.exp(np.minimum(0.0, delta))
        new = ChainState(_mix(acc, y, state.x), _mix(acc, lp_y, state.logp), _mix(acc, lw_y, state.grad))
        return new, StepInfo(acc, prob)


class ISIR(Kernel):
    """Iterated sampling-importance-resampling with ``n_proposals`` slots.

    Slot 0 holds the current state; the other ``N - 1`` are fresh proposals.
    The next state is drawn from the slots by self-normalized importance
    weights using the Gumbel-max trick. If every weight is ``-inf`` the
    chain stays put. ``accepted`` reports whether a fresh slot was chosen.
    """

    name = "isir"

    def __init__(self, target: TargetDistribution, proposal, n_proposals: int):
        if n_proposals < 2:
            raise ValueError("i-SIR needs at least 2 slots")
        self.target, self.proposal, self.n = target, proposal, int(n_proposals)

    def init_state(self, x):
        x = np.array(x, dtype=float)
        lp = self.target.logpdf(x)
        return ChainState(x, lp, lp - self.proposal.logpdf(x))

    def step(self, state, rng):
        k, d = state.x.shape
        y, logq = propose(self.proposal, rng, k, self.n - 1)
        gumbel = _gumbel(rng, (k, self.n))
        lp_y = self.target.logpdf(y)
        lw = np.concatenate([state.grad[:, None], lp_y - logq], axis=1)
        lw = np.where(np.isnan(lw), -np.inf, lw)
        pts = np.concatenate([state.x[:, None, :], y], axis=1)
        lps = np.concatenate([state.logp[:, None], lp_y], axis=1)
        idx = np.argmax(lw + gumbel, axis=1)
        rows = np.arange(k)
        finite = np.isfinite(lw).any(axis=1)
        norm = logsumexp(np.where(finite[:, None], lw, 0.0), axis=1)
        prob = np.where(finite, 1.0 - np.exp(lw[:, 0] - norm), 0.0)
        new = ChainState(pts[rows, idx], lps[rows, idx], lw[rows, idx])
        return new, StepInfo(idx != 0, prob)


class Neutra(Kernel):
    """Run a local kernel on the push-backward of the target and report
    samples mapped back through the flow.

    Args:
        target: Target in data space.
        tmap: Flow ``T`` from latent to data space.
        inner: ``"mala"``, ``"hmc"`` or ``"ess"``.
        step_size, n_leapfrog: Settings of the inner kernel.
    """

    def __init__(self, target: TargetDistribution, tmap: TransportMap, inner: str = "mala",
                 step_size: float = 0.1, n_leapfrog: int = 8):
        self.target, self.map = target, tmap
        self.latent = PushBackward(target, tmap)
        self.inner_name = inner
        if inner == "mala":
            self.inner = MALA(self.latent, step_size)
        elif inner == "hmc":
            self.inner = HMC(self.latent, step_size, n_leapfrog)
        elif inner == "ess":
            self.inner = ESS(self.latent)
        else:
            raise ValueError(f"neutra inner kernel must be mala, hmc or ess, got {inner!r}")
        self.name = f"neutra-{inner}"
        self.has_step_size = self.inner.has_step_size

    @property
    def step_size(self):
        return self.inner.step_size

    @step_size.setter
    def step_size(self, value):
        self.inner.step_size = value

    def init_state(self, x):
        return self.inner.init_state(self.map.inverse(np.asarray(x, dtype=float)))

    def init_latent(self, z):
        return self.inner.init_state(z)

    def step(self, state, rng):
        return self.inner.step(state, rng)

    def to_sample(self, state):
        return self.map.forward(state.x)


class NeutraFlow(Kernel):
    """One i-SIR move with the flow proposal followed by ``n_local`` neutra
    moves. Each part leaves the target invariant, so the composition does.

    The state is kept in data space (positions, log-density, log-weight).
    With ``n_local = 0`` the kernel is exactly ``ISIR``.
    """

    has_step_size = True

    def __init__(self, target: TargetDistribution, proposal, n_proposals: int, n_local: int,
                 inner: str = "mala", step_size: float = 0.1, n_leapfrog: int = 8):
        if n_local < 0:
            raise ValueError("n_local must be non-negative")
        self.global_kernel = ISIR(target, proposal, n_proposals)
        self.local = Neutra(target, proposal.map, inner, step_size, n_leapfrog)
        self.proposal, self.n_local = proposal, int(n_local)
        self.name = f"neutraflow-{inner}"
        self.has_step_size = self.local.has_step_size

    @property
    def step_size(self):
        return self.local.step_size

    @step_size.setter
    def step_size(self, value):
        self.local.step_size = value

    def init_state(self, x):
        return self.global_kernel.init_state(x)

    def step(self, state, rng):
        state, info = self.global_kernel.step(state, rng)
        if self.n_local == 0:
            return state, info
        base = self.proposal.base
        z_state = self.local.init_state(state.x)
        probs = []
        for _ in range(self.n_local):
            z_state, loc = self.local.step(z_state, rng)
            probs.append(loc.accept_prob)
        z = z_state.x
        x = self.proposal.map.forward(z)
        lp = self.global_kernel.target.logpdf(x)
        # log w = log pi(x) - log q(x) = log pi_backward(z) - log rho(z)
        lw = self.local.latent.logpdf(z) - base.logpdf(z)
        local_prob = np.mean(probs, axis=0)
        return ChainState(x, lp, lw), StepInfo(info.accepted, info.accept_prob,
                                                local_accept_prob=local_prob)


# ---------------------------------------------------------------------------
# Ensembles


def adapt_step_size(kernel: Kernel, state: ChainState, rng, warmup_steps: int,
                    target_accept: float = 0.75, bounds=(1e-12, 1e3)):
    """Robbins-Monro tuning of ``kernel.step_size`` towards a target acceptance.

    ``log g <- log g + t^-0.6 (a_t - target)`` where ``a_t`` is the mean
    acceptance probability across chains at step ``t``. The kernel keeps the
    final step size.

    Returns:
        ``(step_size, state)`` after ``warmup_steps`` adaptive steps.
    """
    if not kernel.has_step_size:
        raise ValueError(f"{kernel.name} has no step size to adapt")
    log_g = math.log(kernel.step_size)
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    for t in range(1, warmup_steps + 1):
        state, info = kernel.step(state, rng)
        prob = info.accept_prob if info.local_accept_prob is None else info.local_accept_prob
        log_g += t**-0.6 * (float(np.mean(prob)) - target_accept)
        if log_g < lo or log_g > hi:
            warnings.warn("step size left [1e-12, 1e3]; clamping", RuntimeWarning)
            log_g = min(max(log_g, lo), hi)
        kernel.step_size = math.exp(log_g)
    return kernel.step_size, state


@dataclass
class ChainEnsemble:
    """K chains with their own RNG streams and acceptance counters."""

    state: ChainState
    rngs: list
    accept_counts: np.ndarray
    step_index: int = 0

    @classmethod
    def create(cls, kernel: Kernel, x0, seed: int) -> "ChainEnsemble":
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        return cls(kernel.init_state(x0), spawn_streams(seed, x0.shape[0]),
                   np.zeros(x0.shape[0], dtype=np.int64))

    @property
    def n_chains(self) -> int:
        return self.state.x.shape[0]


@dataclass
class RunResult:
    samples: np.ndarray
    accepted: np.ndarray
    accept_prob: np.ndarray
    step_size: float | None = None
    extra: dict = field(default_factory=dict)

    def kept(self, fraction: float = 0.5) -> np.ndarray:
        """Samples after discarding the first ``ceil(fraction * T)`` steps."""
        start = math.ceil(fraction * self.samples.shape[1])
        return self.samples[:, start:]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))


def run_ensemble(kernel: Kernel, ensemble: ChainEnsemble, n_steps: int) -> RunResult:
    """Advance every chain ``n_steps`` times, recording data-space samples."""
    k = ensemble.n_chains
    first = kernel.to_sample(ensemble.state)
    samples = np.empty((k, n_steps) + first.shape[1:])
    accepted = np.empty((k, n_steps), dtype=bool)
    probs = np.empty((k, n_steps))
    state = ensemble.state
    for t in range(n_steps):
        state, info = kernel.step(state, ensemble.rngs)
        samples[:, t] = kernel.to_sample(state)
        accepted[:, t] = info.accepted
        probs[:, t] = info.accept_prob
    ensemble.state = state
    ensemble.accept_counts += accepted.sum(axis=1)
    ensemble.step_index += n_steps
    return RunResult(samples, accepted, probs, getattr(kernel, "step_size", None))
