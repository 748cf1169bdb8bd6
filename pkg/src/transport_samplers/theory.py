"""Mixing-time bounds for independent Metropolis-Hastings and a grid-exact
validator.

Logs are natural throughout. Scalar calculators evaluate in extended
precision (``np.longdouble``) and round once to double.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

LD = np.longdouble
LN2 = math.log(2.0)


@dataclass(frozen=True)
class BoundInputs:
    """Quantities entering the IMH mixing bounds, range-checked at construction."""

    C_R: float = 0.0
    m: float = 1.0
    epsilon: float = 0.1
    beta: float = 1.0
    sigma: float = 1.0
    d: int = 1
    alpha: float = 0.75
    s: float = 0.25
    psi: float | None = None
    delta_Delta: float = 0.0
    Delta: float = 0.5

    def __post_init__(self):
        checks = [
            (self.C_R >= 0, "C_R must be >= 0"),
            (self.m > 0, "m must be > 0"),
            (0 < self.epsilon < 1, "epsilon must lie in (0, 1)"),
            (self.beta >= 1, "beta must be >= 1"),
            (self.sigma > 0, "sigma must be > 0"),
            (self.d >= 1, "d must be >= 1"),
            (0.5 < self.alpha < 1, "alpha must lie in (1/2, 1)"),
            (0 < self.s <= 0.5, "s must lie in (0, 1/2]"),
            (self.psi is None or self.psi > 0, "psi must be > 0"),
            (self.delta_Delta >= 0, "delta_Delta must be >= 0"),
            (0 < self.Delta < 1, "Delta must lie in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def psi_value(self) -> float:
        """Isoperimetric constant; ``log(2) sqrt(m)`` for strongly log-concave targets."""
        return self.psi if self.psi is not None else isoperimetric_constant(self.m)


def isoperimetric_constant(m: float) -> float:
    return float(LD(LN2) * np.sqrt(LD(m)))


def conductance_lower_bound(alpha: float, C_R: float, psi: float) -> float:
    """``min((1 - a)/2, (1 - a)(2a - 1) psi / (128 C_R))``."""
    first = (LD(1) - LD(alpha)) / 2
    if C_R == 0:
        return float(first)
    second = (LD(1) - LD(alpha)) * (2 * LD(alpha) - 1) * LD(psi) / (128 * LD(C_R))
    return float(min(first, second))


def check_assumption_D2(alpha: float, s: float, delta_Delta: float, C_R: float, psi: float) -> bool:
    """Whether ``delta / (1 - a) <= min(s/4, (2a - 1) psi s / (64 C_R))``."""
    lhs = LD(delta_Delta) / (1 - LD(alpha))
    rhs = LD(s) / 4
    if C_R > 0:
        rhs = min(rhs, (2 * LD(alpha) - 1) * LD(psi) * LD(s) / (64 * LD(C_R)))
    return bool(lhs <= rhs)


def lovasz_mixing_time(phi_s: float, beta: float, epsilon: float) -> float:
    """``(2 / phi^2) log(2 beta / eps)``; infinite when ``phi = 0``."""
    if phi_s == 0:
        return math.inf
    return float(2 / LD(phi_s) ** 2 * np.log(2 * LD(beta) / LD(epsilon)))


def imh_mixing_bound(C_R: float, m: float, epsilon: float, beta: float) -> float:
    """``128 log(2 beta / eps) max(1, 128^2 C_R^2 / (log(2)^2 m))``."""
    ln2 = np.log(LD(2))
    factor = max(LD(1), LD(128) ** 2 * LD(C_R) ** 2 / (ln2**2 * LD(m)))
    return float(128 * np.log(2 * LD(beta) / LD(epsilon)) * factor)


def _r(eps, beta, d):
    ratio = LD(eps) / (2 * LD(beta))
    if ratio >= 1:
        warnings.warn("epsilon >= 2 beta; flooring -log(eps / 2 beta) at 0", RuntimeWarning)
        ell = LD(0)
    else:
        ell = -np.log(ratio)
    q = ell / LD(d)
    return 2 * (1 + max(q**LD(0.25), np.sqrt(q)))


def radius_R(epsilon: float, beta: float, d: int, sigma: float, m: float) -> float:
    """Radius of the ball on which the log-weight Lipschitz constant is needed.

    ``max(sigma sqrt(d) r(eps/272), sqrt(d/m) r(eps/17))`` with
    ``r(e) = 2 (1 + max(l^(1/4), l^(1/2)))`` and ``l = -log(e / 2 beta) / d``.
    """
    sd = np.sqrt(LD(d))
    first = LD(sigma) * sd * _r(LD(epsilon) / 272, beta, d)
    second = np.sqrt(LD(d) / LD(m)) * _r(LD(epsilon) / 17, beta, d)
    return float(max(first, second))


def bound_condition_threshold(m: float) -> float:
    return float(np.log(LD(2)) * np.sqrt(LD(m)) / 32)


def check_theorem_41_condition(C_R_fn, epsilon: float, beta: float, d: int, sigma: float,
                               m: float) -> bool:
    """Whether ``C_R_fn(R) <= log(2) sqrt(m) / 32`` at ``R = radius_R(...)``."""
    R = radius_R(epsilon, beta, d, sigma, m)
    return bool(C_R_fn(R) <= bound_condition_threshold(m))


def c_r_gaussian(R: float, d: int, lam: float) -> float:
    """``R sqrt(d) |1 - 1/(1 + lam)^2|`` for an N(0, I) target and an
    N(0, (1 + lam)^2 I) proposal."""
    if lam <= -1:
        raise ValueError("lambda must exceed -1")
    lam = LD(lam)
    # 1 - 1/(1+l)^2 = l (2 + l) / (1 + l)^2 avoids cancellation for small l
    return float(LD(R) * np.sqrt(LD(d)) * abs(lam * (2 + lam) / (1 + lam) ** 2))


def lambda_scaling(d) -> float:
    """``sqrt(K/(2d) + 1) - 1`` with ``K = log(2)/32``."""
    x = np.log(LD(2)) / 32 / (2 * LD(d))
    return float(x / (np.sqrt(1 + x) + 1))


def c_r_anisotropic_gaussian(R: float, d: int, sigma: float, c_vec) -> float:
    """``sqrt(d) R max_i |1/c_i^2 - 1/sigma^2|``."""
    c = np.asarray(c_vec, dtype=LD)
    if np.any(c <= 0) or sigma <= 0:
        raise ValueError("scales must be positive")
    return float(np.sqrt(LD(d)) * LD(R) * np.max(np.abs(1 / c**2 - 1 / LD(sigma) ** 2)))


def kl_optimal_sigmas(c_vec):
    """Isotropic proposal scales minimizing the forward and the reverse KL to
    ``N(0, diag(c^2))``: arithmetic and harmonic means of ``c^2``."""
    c = np.asarray(c_vec, dtype=LD)
    if np.any(c <= 0):
        raise ValueError("scales must be positive")
    sf = np.sqrt(np.mean(c**2))
    sb = np.sqrt(LD(c.size) / np.sum(1 / c**2))
    return float(sf), float(sb)


def bilip_lower_bound_analytic(a: float, sigma: float, sigma_tilde: float = 1.0) -> float:
    """``(sigma / sigma_tilde) exp(a^2 / (2 sigma^2))``."""
    return float(LD(sigma) / LD(sigma_tilde) * np.exp(LD(a) ** 2 / (2 * LD(sigma) ** 2)))


def conductance_tv_bound(n, beta: float, s: float, phi_s: float):
    """``beta s + beta exp(-n phi^2 / 2)``, an upper bound on the TV after ``n`` steps."""
    n = np.asarray(n, dtype=float)
    return beta * s + beta * np.exp(-n * phi_s**2 / 2)


# ---------------------------------------------------------------------------
# Grid-exact IMH law evolution


class GridIMH:
    """Exact IMH transition on a discrete grid.

    With weights ``w = pi / q`` sorted increasingly, one step of the law
    ``mu -> mu P`` costs O(n) via prefix sums:
    ``(mu P)_j = q_j [sum_{w_i <= w_j} mu_i + w_j sum_{w_i > w_j} mu_i / w_i]
    + mu_j r_j``, where ``r_j`` is the rejection mass at ``j``.
    """

    def __init__(self, pi, q):
        pi = np.asarray(pi, dtype=float)
        q = np.asarray(q, dtype=float)
        self.pi = pi / pi.sum()
        self.q = q / q.sum()
        with np.errstate(divide="ignore"):
            logw = np.log(self.pi) - np.log(self.q)
        self.order = np.argsort(logw, kind="stable")
        lw = logw[self.order]
        self.lw = lw - lw[-1]
        self.w = np.exp(self.lw)
        n = len(lw)
        # ties share the same accept-all block: boundaries via searchsorted
        self.le_end = np.searchsorted(self.lw, self.lw, side="right")
        self.lt_end = np.searchsorted(self.lw, self.lw, side="left")
        qs = self.q[self.order]
        cum_qw = np.concatenate([[0.0], np.cumsum(qs * self.w)])
        cum_q_rev = np.concatenate([np.cumsum(qs[::-1])[::-1], [0.0]])
        accept_mass = cum_q_rev[self.lt_end] + cum_qw[self.lt_end] / self.w
        self.reject = np.clip(1.0 - accept_mass, 0.0, 1.0)
        self.qs = qs
        self.n = n

    def step(self, mu_sorted):
        """One transition of a law given in weight order (``mu[self.order]``)."""
        cum_mu = np.concatenate([[0.0], np.cumsum(mu_sorted)])
        tail = np.concatenate([np.cumsum((mu_sorted / self.w)[::-1])[::-1], [0.0]])
        inflow = cum_mu[self.le_end] + self.w * tail[self.le_end]
        return self.qs * inflow + mu_sorted * self.reject

    def evolve(self, mu0, n_steps: int):
        """TV to ``pi`` after ``0..n_steps`` steps starting from ``mu0``."""
        mu = np.asarray(mu0, dtype=float)[self.order]
        mu = mu / mu.sum()
        pis = self.pi[self.order]
        tv = np.empty(n_steps + 1)
        tv[0] = 0.5 * np.abs(mu - pis).sum()
        for t in range(1, n_steps + 1):
            mu = self.step(mu)
            tv[t] = 0.5 * np.abs(mu - pis).sum()
        return tv


def empirical_imh_tv_curve(target_sigmas, proposal_sigmas, n_steps: int,
                           start: str = "uniform", start_halfwidth: float = 1.0,
                           n_per_axis: int = 512, width: float = 8.0):
    """TV to a centered diagonal Gaussian target of the IMH chain law.

    The chain runs on a grid (``n_per_axis`` points per axis spanning
    ``width`` times the largest scale) with an exact discrete IMH kernel.
    The grid is widened once if more than 1e-6 of target or proposal mass
    falls outside it.

    Args:
        target_sigmas: Target standard deviations, one per axis (d <= 2).
        proposal_sigmas: Proposal standard deviations (scalar or per axis).
        n_steps: Number of steps.
        start: ``"uniform"`` on ``[-h, h]^d`` or ``"proposal"``.
        start_halfwidth: ``h`` for the uniform start.

    Returns:
        Array of ``n_steps + 1`` TV values (index 0 is the start).
    """
    ts = np.atleast_1d(np.asarray(target_sigmas, dtype=float))
    ps = np.broadcast_to(np.atleast_1d(np.asarray(proposal_sigmas, dtype=float)), ts.shape)
    d = ts.size
    if d > 2:
        raise ValueError("grid validator supports d <= 2")
    smax = float(max(ts.max(), ps.max()))
    for attempt in range(2):
        half = width * smax
        leak = max(2.0 * norm.sf(half / s) for s in np.concatenate([ts, ps]))
        if leak <= 1e-6:
            break
        if attempt == 0:
            width *= 1.5
    else:
        raise RuntimeError("grid mass leakage above 1e-6 after widening")
    axis = np.linspace(-half, half, n_per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    log_pi = -0.5 * np.sum((mesh / ts) ** 2, axis=1)
    log_q = -0.5 * np.sum((mesh / ps) ** 2, axis=1)
    pi = np.exp(log_pi - log_pi.max())
    q = np.exp(log_q - log_q.max())
    if start == "uniform":
        mu0 = np.all(np.abs(mesh) <= start_halfwidth, axis=1).astype(float)
    elif start == "proposal":
        mu0 = q.copy()
    else:
        raise ValueError(f"unknown start {start!r}")
    return GridIMH(pi, q).evolve(mu0, n_steps)


def uniform_start_warmness(halfwidth: float = 1.0, sigma: float = 1.0) -> float:
    """Warmness of the uniform law on ``[-h, h]`` for N(0, sigma^2): the
    largest density ratio, reached at the interval ends."""
    return float(1.0 / (2.0 * halfwidth * norm.pdf(halfwidth, scale=sigma)))


def mixing_step(tv_curve, epsilon: float) -> int | None:
    """First index with TV <= epsilon, or None."""
    hits = np.flatnonzero(np.asarray(tv_curve) <= epsilon)
    return int(hits[0]) if hits.size else None
