"""Closed-form target distributions.

Every target works on batches: ``logpdf`` maps an array of shape ``(..., d)``
to ``(...)`` and ``grad_logpdf`` maps ``(..., d)`` to ``(..., d)``. Random
draws always go through an explicit ``numpy.random.Generator``; no
distribution stores RNG state.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


class DimensionError(ValueError):
    pass


class GradientUnavailable(NotImplementedError):
    pass


class SamplerUnavailable(NotImplementedError):
    pass


class TargetDistribution:
    """Base class for (possibly unnormalized) log-densities on R^d.

    Subclasses override ``_logpdf`` and optionally ``_grad`` and ``_sample``.
    ``mode_locations`` is an ``(n_modes, d)`` array or ``None``.
    """

    mode_locations: np.ndarray | None = None

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = int(dim)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise DimensionError(
                f"expected trailing dimension {self.dim}, got shape {x.shape}"
            )
        return x

    @property
    def has_gradient(self) -> bool:
        return type(self)._grad is not TargetDistribution._grad

    @property
    def has_sampler(self) -> bool:
        return type(self)._sample is not TargetDistribution._sample

    def logpdf(self, x) -> np.ndarray:
        return self._logpdf(self._check(x))

    def grad_logpdf(self, x) -> np.ndarray:
        return self._grad(self._check(x))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._sample(rng, int(n))

    def _logpdf(self, x):
        raise NotImplementedError

    def _grad(self, x):
        raise GradientUnavailable(
            f"gradient unavailable for {type(self).__name__}; "
            "use ESS, IMH or i-SIR instead"
        )

    def _sample(self, rng, n):
        raise SamplerUnavailable(
            f"{type(self).__name__} has no exact sampler; "
            "generate ground truth with MCMC instead"
        )


def logpdf(target: TargetDistribution, x) -> np.ndarray:
    return target.logpdf(x)


def grad_logpdf(target: TargetDistribution, x) -> np.ndarray:
    return target.grad_logpdf(x)


def exact_sample(target: TargetDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    return target.sample(rng, n)


def closest_mode(target: TargetDistribution, x) -> np.ndarray:
    """Index of the nearest entry of ``target.mode_locations`` (0-based).

    Ties go to the lowest index, which is what ``argmin`` does.
    """
    modes = target.mode_locations
    if modes is None:
        raise ValueError(f"{type(target).__name__} exposes no mode locations")
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x[..., None, :] - modes) ** 2, axis=-1)
    return np.argmin(d2, axis=-1)


class Gaussian(TargetDistribution):
    """Normalized multivariate normal, given a covariance or a precision.

    The whitening matrix ``W`` (``W.T @ W`` is the precision) and a square
    root ``S`` of the covariance are computed once at construction; a
    non positive-definite input fails here rather than at evaluation.
    """

    def __init__(self, mean=None, cov=None, precision=None, dim: int | None = None):
        if (cov is None) == (precision is None):
            raise ValueError("give exactly one of cov or precision")
        mat = np.atleast_2d(np.asarray(cov if cov is not None else precision, dtype=float))
        super().__init__(mat.shape[0] if dim is None else dim)
        if mat.shape != (self.dim, self.dim):
            raise DimensionError(f"matrix shape {mat.shape} does not match dim {self.dim}")
        self.mean = np.zeros(self.dim) if mean is None else np.asarray(mean, dtype=float)
        try:
            chol = np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance/precision is not positive definite") from exc
        if cov is not None:
            self.cov = mat
            self.sqrt_cov = chol
            self.whitening = np.linalg.inv(chol)
        else:
            self.whitening = chol.T
            self.sqrt_cov = np.linalg.inv(chol.T)
            self.cov = self.sqrt_cov @ self.sqrt_cov.T
        self.precision = self.whitening.T @ self.whitening
        log_det_cov = -2.0 * np.sum(np.log(np.abs(np.diag(chol)))) if precision is not None \
            else 2.0 * np.sum(np.log(np.diag(chol)))
        self.log_normalizer = 0.5 * (self.dim * LOG_2PI + log_det_cov)

    @classmethod
    def isotropic(cls, dim: int, scale: float = 1.0) -> "Gaussian":
        return cls(cov=scale**2 * np.eye(dim))

    def _logpdf(self, x):
        r = (x - self.mean) @ self.whitening.T
        return -0.5 * np.sum(r * r, axis=-1) - self.log_normalizer

    def _grad(self, x):
        return -(x - self.mean) @ self.precision

    def _sample(self, rng, n):
        return self.transform_normals(rng.standard_normal((n, self.dim)))

    def transform_normals(self, xi) -> np.ndarray:
        """Map standard normal draws to draws from this Gaussian."""
        return self.mean + np.asarray(xi) @ self.sqrt_cov.T

    def sample_from_normals(self, xi):
        x = self.transform_normals(xi)
        return x, self.logpdf(x)


class StandardNormal(Gaussian):
    def __init__(self, dim: int):
        super().__init__(cov=np.eye(dim))

    def _logpdf(self, x):
        return -0.5 * np.sum(x * x, axis=-1) - 0.5 * self.dim * LOG_2PI

    def _grad(self, x):
        return -x

    def _sample(self, rng, n):
        return rng.standard_normal((n, self.dim))


class IllConditionedGaussian(Gaussian):
    """Centered Gaussian with log-spaced scales rotated in the (first, last) plane.

    Scales run from ``sigma_min`` to ``sigma_max``; the rotation by pi/4
    couples the smallest and largest axes.
    """

    def __init__(self, dim: int, sigma_min: float = 1e-1, sigma_max: float = 1e1):
        if dim < 2 or dim % 2:
            raise ValueError("dim must be an even integer >= 2")
        self.sigmas = np.logspace(np.log10(sigma_min), np.log10(sigma_max), dim)
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        c = s = math.sqrt(0.5)
        rot = np.eye(dim)
        rot[0, 0], rot[0, -1], rot[-1, 0], rot[-1, -1] = c, -s, s, c
        self.rotation = rot
        super().__init__(cov=rot @ np.diag(self.sigmas**2) @ rot.T)


class Funnel(TargetDistribution):
    """Neal's funnel: x1 ~ N(0, a) and x_i | x1 ~ N(0, exp(b x1)).

    ``a`` is a variance, as is ``exp(b x1)``.
    """

    def __init__(self, dim: int, a: float = 3.0, b: float = 1.0):
        if dim < 2:
            raise ValueError("funnel needs dim >= 2")
        super().__init__(dim)
        self.a, self.b = float(a), float(b)

    def _logpdf(self, x):
        x1, rest = x[..., 0], x[..., 1:]
        k = self.dim - 1
        return (
            -0.5 * x1**2 / self.a - 0.5 * math.log(2 * math.pi * self.a)
            - 0.5 * np.exp(-self.b * x1) * np.sum(rest**2, axis=-1)
            - 0.5 * k * self.b * x1 - 0.5 * k * LOG_2PI
        )

    def _grad(self, x):
        x1, rest = x[..., 0], x[..., 1:]
        e = np.exp(-self.b * x1)
        g = np.empty_like(x)
        g[..., 0] = (-x1 / self.a - 0.5 * (self.dim - 1) * self.b
                     + 0.5 * self.b * e * np.sum(rest**2, axis=-1))
        g[..., 1:] = -rest * e[..., None]
        return g

    def _sample(self, rng, n):
        x = np.empty((n, self.dim))
        x[:, 0] = math.sqrt(self.a) * rng.standard_normal(n)
        x[:, 1:] = np.exp(0.5 * self.b * x[:, :1]) * rng.standard_normal((n, self.dim - 1))
        return x


class Banana(TargetDistribution):
    """Push-forward of N(0, I) through the banana map (even coordinates scaled by
    ``a``, odd ones bent by ``b a^2 z_even^2 - a^2 b``)."""

    def __init__(self, dim: int, a: float = 10.0, b: float = 0.02):
        if dim < 2 or dim % 2:
            raise ValueError("banana needs an even dim")
        super().__init__(dim)
        self.a, self.b = float(a), float(b)

    def _latent(self, x):
        xe, xo = x[..., 0::2], x[..., 1::2]
        return xe / self.a, xo - self.b * xe**2 + self.a**2 * self.b

    def _logpdf(self, x):
        ze, zo = self._latent(x)
        return (-0.5 * (np.sum(ze**2, axis=-1) + np.sum(zo**2, axis=-1))
                - 0.5 * self.dim * LOG_2PI - 0.5 * self.dim * math.log(self.a))

    def _grad(self, x):
        ze, zo = self._latent(x)
        g = np.empty_like(x)
        g[..., 0::2] = -ze / self.a + 2.0 * self.b * x[..., 0::2] * zo
        g[..., 1::2] = -zo
        return g

    def _sample(self, rng, n):
        z = rng.standard_normal((n, self.dim))
        x = np.empty_like(z)
        x[:, 0::2] = self.a * z[:, 0::2]
        x[:, 1::2] = z[:, 1::2] + self.b * self.a**2 * (z[:, 0::2] ** 2 - 1.0)
        return x


class IsotropicGaussianMixture(TargetDistribution):
    """Mixture of N(mu_k, sigma^2 I) with given weights (normalized density)."""

    def __init__(self, means, sigma: float = 1.0, weights=None):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        super().__init__(means.shape[1])
        self.means = means
        self.sigma = float(sigma)
        k = means.shape[0]
        w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        self.weights = w / w.sum()
        self.mode_locations = means

    def _component_logpdf(self, x):
        d2 = np.sum((x[..., None, :] - self.means) ** 2, axis=-1)
        return (np.log(self.weights) - 0.5 * d2 / self.sigma**2
                - 0.5 * self.dim * (LOG_2PI + 2.0 * math.log(self.sigma)))

    def _logpdf(self, x):
        return logsumexp(self._component_logpdf(x), axis=-1)

    def _grad(self, x):
        lc = self._component_logpdf(x)
        resp = np.exp(lc - logsumexp(lc, axis=-1, keepdims=True))
        return (resp @ self.means - x) / self.sigma**2

    def _sample(self, rng, n):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + self.sigma * rng.standard_normal((n, self.dim))


def mixture4_means(dim: int, a: float) -> np.ndarray:
    half = dim // 2
    mu1 = np.full(dim, a)
    mu2 = np.concatenate([-np.ones(half), np.ones(dim - half)]) * a
    return np.stack([mu1, mu2, -mu2, -mu1])


class Mixture4(IsotropicGaussianMixture):
    """Equal-weight mixture of four unit Gaussians.

    Means are ``a * (1, ..., 1)``, ``a * (-1, .., -1, 1, .., 1)`` (first half
    negative) and their negatives, in that order.
    """

    def __init__(self, dim: int, a: float = 0.5919):
        if dim < 2:
            raise ValueError("Mixture4 needs dim >= 2")
        self.a = float(a)
        super().__init__(mixture4_means(dim, a), sigma=1.0)

    @property
    def max_marginal_variance(self) -> float:
        # 1 + sum_j (1/4) (mu_j)_i^2, identical for every coordinate
        return 1.0 + self.a**2


class TwoMode1D(IsotropicGaussianMixture):
    """0.5 N(-a, sigma^2) + 0.5 N(a, sigma^2) on the real line."""

    def __init__(self, a: float = 1.0, sigma: float = 1.0):
        self.a = float(a)
        super().__init__([[-a], [a]], sigma=sigma)


class Phi4(TargetDistribution):
    """Discretized 1d phi^4 field with Dirichlet boundaries (unnormalized).

    ``-log pi = beta * (a d / 2 * sum (phi_i - phi_{i-1})^2
    + 1 / (4 a d) * sum (1 - phi_i^2)^2)`` with ``phi_0 = phi_{d+1} = 0``.
    """

    def __init__(self, dim: int, a_coupling: float = 0.1, beta: float = 20.0):
        super().__init__(dim)
        self.a_coupling = float(a_coupling)
        self.beta = float(beta)
        self._ad = self.a_coupling * self.dim

    def energy(self, phi) -> np.ndarray:
        phi = self._check(phi)
        pad = np.zeros(phi.shape[:-1] + (1,))
        full = np.concatenate([pad, phi, pad], axis=-1)
        kinetic = np.sum(np.diff(full, axis=-1) ** 2, axis=-1)
        potential = np.sum((1.0 - phi**2) ** 2, axis=-1)
        return self.beta * (0.5 * self._ad * kinetic + potential / (4.0 * self._ad))

    def _logpdf(self, x):
        return -self.energy(x)

    def _grad(self, x):
        lap = 2.0 * x
        lap[..., 1:] -= x[..., :-1]
        lap[..., :-1] -= x[..., 1:]
        return -self.beta * (self._ad * lap - x * (1.0 - x**2) / self._ad)

    @property
    def mode_locations(self) -> np.ndarray:
        plus = phi4_mode(self.dim, self.a_coupling, self.beta)
        return np.stack([plus, -plus])

    def base_distribution(self) -> Gaussian:
        return phi4_base(self.dim, self.a_coupling, self.beta)


def dirichlet_laplacian(dim: int) -> np.ndarray:
    return 2.0 * np.eye(dim) - np.eye(dim, k=1) - np.eye(dim, k=-1)


def phi4_base(dim: int, a_coupling: float = 0.1, beta: float = 20.0) -> Gaussian:
    """Colored Gaussian keeping the quadratic part of the phi^4 energy."""
    ad = a_coupling * dim
    precision = beta * (ad * dirichlet_laplacian(dim) + np.eye(dim) / ad)
    return Gaussian(precision=precision)


@functools.lru_cache(maxsize=None)
def _phi4_mode_cached(dim: int, a_coupling: float, beta: float) -> tuple:
    target = Phi4(dim, a_coupling, beta)
    ad = a_coupling * dim
    # curvature bound: beta * (4 a d + 2 / (a d)) near |phi| <= 1
    step = min(1e-3, 1.0 / (beta * (4.0 * ad + 2.0 / ad)))
    phi = np.ones(dim)
    for _ in range(10_000_000):
        g = target.grad_logpdf(phi)
        if np.linalg.norm(g) < 1e-8:
            break
        phi = phi + step * g
    else:
        raise RuntimeError("phi^4 mode search did not converge")
    return tuple(phi)


def phi4_mode(dim: int, a_coupling: float = 0.1, beta: float = 20.0) -> np.ndarray:
    """Positive mode of the phi^4 target, from gradient descent started at +1."""
    return np.array(_phi4_mode_cached(int(dim), float(a_coupling), float(beta)))
