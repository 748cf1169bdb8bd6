"""Invertible transport maps with exact log-Jacobians.

A map ``T`` sends latent points ``z`` to data points ``x``. All methods are
vectorized over leading axes. Besides evaluation and log-determinants, maps
that support gradient-based samplers provide ``vjp`` (the product of the
transposed Jacobian with a vector) and ``grad_log_det_forward``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import log_ndtr, ndtri_exp

from .distributions import (
    LOG_2PI,
    DimensionError,
    Gaussian,
    GradientUnavailable,
    IllConditionedGaussian,
    TargetDistribution,
)


class TransportMap:
    """Base class: a C^1 diffeomorphism of R^d."""

    def __init__(self, dim: int):
        self.dim = int(dim)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise DimensionError(f"expected trailing dimension {self.dim}, got shape {x.shape}")
        return x

    def forward(self, z) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, x) -> np.ndarray:
        raise NotImplementedError

    def log_det_forward(self, z) -> np.ndarray:
        raise NotImplementedError

    def log_det_inverse(self, x) -> np.ndarray:
        return -self.log_det_forward(self.inverse(x))

    def forward_and_log_det(self, z):
        return self.forward(z), self.log_det_forward(z)

    def inverse_and_log_det(self, x):
        return self.inverse(x), self.log_det_inverse(x)

    def vjp(self, z, v) -> np.ndarray:
        """Return ``J_T(z)^T v`` row-wise."""
        raise GradientUnavailable(f"{type(self).__name__} does not provide Jacobian products")

    def grad_log_det_forward(self, z) -> np.ndarray:
        raise GradientUnavailable(f"{type(self).__name__} does not provide log-det gradients")

    def pullback_score(self, z, v) -> np.ndarray:
        """``J_T(z)^T v + grad log|J_T(z)|``: the latent score when ``v`` is
        the data-space score at ``T(z)``."""
        return self.vjp(z, v) + self.grad_log_det_forward(z)


class IdentityMap(TransportMap):
    def forward(self, z):
        return self._check(z).copy()

    def inverse(self, x):
        return self._check(x).copy()

    def log_det_forward(self, z):
        return np.zeros(self._check(z).shape[:-1])

    def log_det_inverse(self, x):
        return np.zeros(self._check(x).shape[:-1])

    def vjp(self, z, v):
        return np.array(v, dtype=float)

    def grad_log_det_forward(self, z):
        return np.zeros_like(self._check(z))


class LinearMap(TransportMap):
    """Affine map ``z -> A z + shift``."""

    def __init__(self, matrix, shift=None):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        super().__init__(matrix.shape[0])
        self.matrix = matrix
        self.matrix_inv = np.linalg.inv(matrix)
        self.shift = np.zeros(self.dim) if shift is None else np.asarray(shift, dtype=float)
        sign, logdet = np.linalg.slogdet(matrix)
        if sign == 0:
            raise ValueError("singular linear map")
        self.log_abs_det = float(logdet)

    def forward(self, z):
        return self._check(z) @ self.matrix.T + self.shift

    def inverse(self, x):
        return (self._check(x) - self.shift) @ self.matrix_inv.T

    def log_det_forward(self, z):
        return np.full(self._check(z).shape[:-1], self.log_abs_det)

    def log_det_inverse(self, x):
        return np.full(self._check(x).shape[:-1], -self.log_abs_det)

    def vjp(self, z, v):
        return np.asarray(v, dtype=float) @ self.matrix

    def grad_log_det_forward(self, z):
        return np.zeros_like(self._check(z))


class InterpolatedGaussianFlow(LinearMap):
    """Linear flows interpolating between isotropic scalings and the exact
    Cholesky transport of an ill-conditioned Gaussian.

    ``t = 0`` is ``sigma_1 I``, ``t = 1/2`` is the Cholesky factor of the
    target covariance (a perfect flow) and ``t = 1`` is ``sigma_d I``.
    """

    def __init__(self, t: float, target: IllConditionedGaussian):
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        self.t = float(t)
        chol = target.sqrt_cov
        d = target.dim
        s1, sd = target.sigmas[0], target.sigmas[-1]
        if t < 0.5:
            mat = (1.0 - 2.0 * t) * s1 * np.eye(d) + 2.0 * t * chol
        elif t == 0.5:
            mat = chol.copy()
        else:
            mat = (2.0 * t - 1.0) * sd * np.eye(d) + 2.0 * (1.0 - t) * chol
        super().__init__(mat)


class FunnelFlow(TransportMap):
    """Analytic funnel flow.

    ``x_1 = sqrt(a / alpha) z_1`` and
    ``x_i = alpha^{-1/2} exp(b sqrt(a / alpha) z_1 / 2) z_i``. With
    ``alpha = 1`` it carries N(0, I) exactly onto ``Funnel(a, b)``, and the
    inverse carries ``Funnel(a, b)`` onto N(0, alpha I).
    """

    def __init__(self, dim: int, a: float, b: float, alpha: float = 1.0):
        super().__init__(dim)
        self.a, self.b, self.alpha = float(a), float(b), float(alpha)
        self._c = math.sqrt(self.a / self.alpha)
        self._k = 0.5 * self.b * self._c

    @classmethod
    def from_beta(cls, dim: int, beta: float, a_star: float = 3.0, b_star: float = 1.0):
        """Flow whose push-forward mode matches ``Funnel(a_star, b_star)``
        for every ``beta``; exact at ``beta = 1``."""
        return cls(dim, beta * a_star, b_star, beta)

    def forward(self, z):
        z = self._check(z)
        x = np.empty_like(z)
        x[..., 0] = self._c * z[..., 0]
        x[..., 1:] = np.exp(self._k * z[..., :1]) * z[..., 1:] / math.sqrt(self.alpha)
        return x

    def inverse(self, x):
        x = self._check(x)
        z = np.empty_like(x)
        z[..., 0] = x[..., 0] / self._c
        z[..., 1:] = math.sqrt(self.alpha) * np.exp(-0.5 * self.b * x[..., :1]) * x[..., 1:]
        return z

    def log_det_forward(self, z):
        z = self._check(z)
        return (0.5 * math.log(self.a) - 0.5 * self.dim * math.log(self.alpha)
                + (self.dim - 1) * self._k * z[..., 0])

    def log_det_inverse(self, x):
        x = self._check(x)
        return (-0.5 * math.log(self.a) + 0.5 * self.dim * math.log(self.alpha)
                - 0.5 * (self.dim - 1) * self.b * x[..., 0])

    def vjp(self, z, v):
        z = self._check(z)
        v = np.asarray(v, dtype=float)
        scale = np.exp(self._k * z[..., :1]) / math.sqrt(self.alpha)
        out = np.empty(np.broadcast_shapes(z.shape, v.shape))
        out[..., 0] = self._c * v[..., 0] + self._k * np.sum(v[..., 1:] * scale * z[..., 1:], axis=-1)
        out[..., 1:] = scale * v[..., 1:]
        return out

    def grad_log_det_forward(self, z):
        g = np.zeros_like(self._check(z))
        g[..., 0] = (self.dim - 1) * self._k
        return g


class BananaFlow(TransportMap):
    """Exact flow from N(0, I) onto the banana target."""

    def __init__(self, dim: int, a: float = 10.0, b: float = 0.02):
        if dim % 2:
            raise ValueError("banana flow needs an even dim")
        super().__init__(dim)
        self.a, self.b = float(a), float(b)

    def forward(self, z):
        z = self._check(z)
        x = np.empty_like(z)
        ze = z[..., 0::2]
        x[..., 0::2] = self.a * ze
        x[..., 1::2] = z[..., 1::2] + self.b * self.a**2 * (ze**2 - 1.0)
        return x

    def inverse(self, x):
        x = self._check(x)
        z = np.empty_like(x)
        xe = x[..., 0::2]
        z[..., 0::2] = xe / self.a
        z[..., 1::2] = x[..., 1::2] - self.b * xe**2 + self.a**2 * self.b
        return z

    def log_det_forward(self, z):
        return np.full(self._check(z).shape[:-1], 0.5 * self.dim * math.log(self.a))

    def log_det_inverse(self, x):
        return np.full(self._check(x).shape[:-1], -0.5 * self.dim * math.log(self.a))

    def vjp(self, z, v):
        z = self._check(z)
        v = np.asarray(v, dtype=float)
        out = np.empty(np.broadcast_shapes(z.shape, v.shape))
        out[..., 0::2] = self.a * v[..., 0::2] + 2.0 * self.b * self.a**2 * z[..., 0::2] * v[..., 1::2]
        out[..., 1::2] = v[..., 1::2]
        return out

    def grad_log_det_forward(self, z):
        return np.zeros_like(self._check(z))


# ---------------------------------------------------------------------------
# Monotone transports between a symmetric two-Gaussian mixture and a Gaussian


def _mixture_log_cdf(y, a, sigma, log_w_minus=math.log(0.5), log_w_plus=math.log(0.5)):
    """log F and log (1 - F) of ``w N(-a, s^2) + (1 - w) N(a, s^2)``."""
    lo = np.logaddexp(log_w_minus + log_ndtr((y + a) / sigma), log_w_plus + log_ndtr((y - a) / sigma))
    hi = np.logaddexp(log_w_minus + log_ndtr(-(y + a) / sigma), log_w_plus + log_ndtr(-(y - a) / sigma))
    return lo, hi


def _mixture_log_pdf(y, a, sigma, log_w_minus=math.log(0.5), log_w_plus=math.log(0.5)):
    c = -0.5 * LOG_2PI - math.log(sigma)
    return np.logaddexp(log_w_minus - 0.5 * ((y + a) / sigma) ** 2,
                        log_w_plus - 0.5 * ((y - a) / sigma) ** 2) + c


def _gauss_quantile_from_tails(log_lo, log_hi, scale):
    """Gaussian quantile from log CDF and log survival, using whichever tail
    is smaller so that no precision is lost far from the median."""
    log_lo, log_hi = np.broadcast_arrays(log_lo, log_hi)
    out = np.empty(log_lo.shape)
    left = log_lo <= log_hi
    out[left] = scale * ndtri_exp(log_lo[left])
    out[~left] = -scale * ndtri_exp(log_hi[~left])
    if not np.all(np.isfinite(out)):
        warnings.warn("Gaussian quantile saturated to an infinite value", RuntimeWarning)
    return out


def _mixture_quantile(x, a, sigma, sigma_tilde, log_w_minus=math.log(0.5),
                      log_w_plus=math.log(0.5), tol=1e-12, max_iter=200):
    """Solve ``F_mix(y) = Phi(x / sigma_tilde)`` for ``y`` by bisection.

    The root is bracketed by ``sigma q - a`` and ``sigma q + a`` where
    ``q = x / sigma_tilde``, because each mixture component CDF bounds the
    mixture CDF. Comparisons happen on the smaller tail in log space.
    """
    x = np.asarray(x, dtype=float)
    q = x / sigma_tilde
    target_lo, target_hi = log_ndtr(q), log_ndtr(-q)
    lo = sigma * q - a
    hi = sigma * q + a
    left = q <= 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_lo, f_hi = _mixture_log_cdf(mid, a, sigma, log_w_minus, log_w_plus)
        # F(mid) < target  <=>  on the upper tail, S(mid) > target survival
        below = np.where(left, f_lo < target_lo, f_hi > target_hi)
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


class Bogachev1DMap(TransportMap):
    """Monotone transport between ``mu = N(-a, s^2)/2 + N(a, s^2)/2`` and
    ``nu = N(0, s_tilde^2)``.

    With ``direction="to_gaussian"`` the forward map is ``F_nu^{-1} o F_mu``
    (mixture space to Gaussian space); ``"to_mixture"`` swaps forward and
    inverse. Quantiles are evaluated from log-tail probabilities, which
    keeps the map finite without clamping the CDF.
    """

    def __init__(self, a: float, sigma: float = 1.0, sigma_tilde: float = 1.0,
                 direction: str = "to_gaussian"):
        super().__init__(1)
        if direction not in ("to_gaussian", "to_mixture"):
            raise ValueError(f"unknown direction {direction!r}")
        if a < 0 or sigma <= 0 or sigma_tilde <= 0:
            raise ValueError("need a >= 0, sigma > 0, sigma_tilde > 0")
        self.a, self.sigma, self.sigma_tilde = float(a), float(sigma), float(sigma_tilde)
        self.direction = direction

    # mixture -> Gaussian pieces, acting on plain arrays
    def _t(self, y):
        lo, hi = _mixture_log_cdf(-np.abs(y), self.a, self.sigma)
        # evaluate on the negative half and reflect: exact odd symmetry
        return np.sign(y) * -_gauss_quantile_from_tails(lo, hi, self.sigma_tilde)

    def _t_inv(self, x):
        return np.sign(x) * -_mixture_quantile(-np.abs(x), self.a, self.sigma, self.sigma_tilde)

    def _log_dt(self, y, ty):
        log_phi = -0.5 * (ty / self.sigma_tilde) ** 2 - 0.5 * LOG_2PI - math.log(self.sigma_tilde)
        return _mixture_log_pdf(y, self.a, self.sigma) - log_phi

    def _score_mu(self, y):
        lm = -0.5 * ((y + self.a) / self.sigma) ** 2
        lp = -0.5 * ((y - self.a) / self.sigma) ** 2
        r = np.exp(lm - np.logaddexp(lm, lp))
        mean = -self.a * r + self.a * (1.0 - r)
        return (mean - y) / self.sigma**2

    def _dlog_dt(self, y, ty, dt):
        return self._score_mu(y) + ty * dt / self.sigma_tilde**2

    def derivative(self, z) -> np.ndarray:
        z = self._check(z)
        return np.exp(self.log_det_forward(z))[..., None]

    def forward(self, z):
        z = self._check(z)
        return self._t(z) if self.direction == "to_gaussian" else self._t_inv(z)

    def inverse(self, x):
        x = self._check(x)
        return self._t_inv(x) if self.direction == "to_gaussian" else self._t(x)

    def log_det_forward(self, z):
        z = self._check(z)
        if self.direction == "to_gaussian":
            return self._log_dt(z, self._t(z))[..., 0]
        y = self._t_inv(z)
        return -self._log_dt(y, z)[..., 0]

    def log_det_inverse(self, x):
        x = self._check(x)
        if self.direction == "to_gaussian":
            y = self._t_inv(x)
            return -self._log_dt(y, x)[..., 0]
        return self._log_dt(x, self._t(x))[..., 0]

    def vjp(self, z, v):
        return np.exp(self.log_det_forward(z))[..., None] * np.asarray(v, dtype=float)

    def grad_log_det_forward(self, z):
        z = self._check(z)
        if self.direction == "to_gaussian":
            tz = self._t(z)
            dt = np.exp(self._log_dt(z, tz))
            return self._dlog_dt(z, tz, dt)
        y = self._t_inv(z)
        dt = np.exp(self._log_dt(y, z))
        # d/dz log S'(z) = -(log T')'(S(z)) * S'(z)
        return -self._dlog_dt(y, z, dt) / dt


class Bogachev2DMap(TransportMap):
    """Triangular (Knothe) transport from ``N(-a 1, s^2 I)/2 + N(a 1, s^2 I)/2``
    onto ``N(0, s_tilde^2 I)`` in two dimensions.

    The first coordinate uses the 1d map. The second uses the monotone map
    of the conditional law of ``x_2`` given ``x_1``, a two-Gaussian mixture
    with weight ``w(x_1) = N(x_1; -a) / (N(x_1; -a) + N(x_1; a))`` on the
    ``-a`` component. The conditional quantile has no closed form and is
    found by bisection.
    """

    def __init__(self, a: float, sigma: float = 1.0, sigma_tilde: float = 1.0,
                 direction: str = "to_gaussian"):
        super().__init__(2)
        if direction not in ("to_gaussian", "to_mixture"):
            raise ValueError(f"unknown direction {direction!r}")
        self.a, self.sigma, self.sigma_tilde = float(a), float(sigma), float(sigma_tilde)
        self.direction = direction
        self._first = Bogachev1DMap(a, sigma, sigma_tilde)

    def log_weights(self, x1):
        """(log w, log (1 - w)) of the conditional mixture given ``x_1``."""
        lm = -0.5 * ((x1 + self.a) / self.sigma) ** 2
        lp = -0.5 * ((x1 - self.a) / self.sigma) ** 2
        norm = np.logaddexp(lm, lp)
        return lm - norm, lp - norm

    def _t(self, y):
        out = np.empty_like(y)
        out[..., 0] = self._first._t(y[..., 0])
        lw_m, lw_p = self.log_weights(y[..., 0])
        lo, hi = _mixture_log_cdf(y[..., 1], self.a, self.sigma, lw_m, lw_p)
        out[..., 1] = _gauss_quantile_from_tails(lo, hi, self.sigma_tilde)
        return out

    def _t_inv(self, x):
        out = np.empty_like(x)
        out[..., 0] = self._first._t_inv(x[..., 0])
        lw_m, lw_p = self.log_weights(out[..., 0])
        out[..., 1] = _mixture_quantile(x[..., 1], self.a, self.sigma, self.sigma_tilde, lw_m, lw_p)
        return out

    def _log_dt(self, y, ty):
        ld1 = self._first._log_dt(y[..., 0], ty[..., 0])
        lw_m, lw_p = self.log_weights(y[..., 0])
        log_phi = -0.5 * (ty[..., 1] / self.sigma_tilde) ** 2 - 0.5 * LOG_2PI - math.log(self.sigma_tilde)
        ld2 = _mixture_log_pdf(y[..., 1], self.a, self.sigma, lw_m, lw_p) - log_phi
        return ld1 + ld2

    def forward(self, z):
        z = self._check(z)
        return self._t(z) if self.direction == "to_gaussian" else self._t_inv(z)

    def inverse(self, x):
        x = self._check(x)
        return self._t_inv(x) if self.direction == "to_gaussian" else self._t(x)

    def log_det_forward(self, z):
        z = self._check(z)
        if self.direction == "to_gaussian":
            return self._log_dt(z, self._t(z))
        return -self._log_dt(self._t_inv(z), z)

    def log_det_inverse(self, x):
        x = self._check(x)
        if self.direction == "to_gaussian":
            return -self._log_dt(self._t_inv(x), x)
        return self._log_dt(x, self._t(x))


class SmoothedBogachev1DMap(TransportMap):
    """Monotone cubic (PCHIP) interpolant of the 1d mixture-to-Gaussian map.

    Knots are uniform on ``[-(a + 4 s), a + 4 s]``; outside, the map is
    extended linearly with the end slopes. The coarse knot grid cannot
    resolve the steep shoulders of the exact map, which is the point: the
    push-forward of a Gaussian through the smoothed inverse picks up
    spurious bumps.
    """

    def __init__(self, a: float, sigma: float = 1.0, sigma_tilde: float = 1.0,
                 n_knots: int = 33, direction: str = "to_gaussian"):
        super().__init__(1)
        if direction not in ("to_gaussian", "to_mixture"):
            raise ValueError(f"unknown direction {direction!r}")
        self.exact = Bogachev1DMap(a, sigma, sigma_tilde)
        self.direction = direction
        r = a + 4.0 * sigma
        self.knots = np.linspace(-r, r, n_knots)
        self.values = self.exact._t(self.knots)
        self._spline = PchipInterpolator(self.knots, self.values, extrapolate=False)
        self._dspline = self._spline.derivative()
        self._d2spline = self._dspline.derivative()
        self._slope_lo = float(self._dspline(self.knots[0]))
        self._slope_hi = float(self._dspline(self.knots[-1]))

    def _t(self, y):
        y = np.asarray(y, dtype=float)
        out = self._spline(np.clip(y, self.knots[0], self.knots[-1]))
        out = np.where(y < self.knots[0], self.values[0] + self._slope_lo * (y - self.knots[0]), out)
        return np.where(y > self.knots[-1], self.values[-1] + self._slope_hi * (y - self.knots[-1]), out)

    def _dt(self, y):
        y = np.asarray(y, dtype=float)
        out = self._dspline(np.clip(y, self.knots[0], self.knots[-1]))
        out = np.where(y < self.knots[0], self._slope_lo, out)
        return np.where(y > self.knots[-1], self._slope_hi, out)

    def _d2t(self, y):
        y = np.asarray(y, dtype=float)
        inside = (y >= self.knots[0]) & (y <= self.knots[-1])
        return np.where(inside, self._d2spline(np.clip(y, self.knots[0], self.knots[-1])), 0.0)

    def _t_inv(self, x, tol=1e-13, max_iter=200):
        x = np.asarray(x, dtype=float)
        # invert the linear tails directly, bisect inside the knot range
        lo = np.full(x.shape, self.knots[0])
        hi = np.full(x.shape, self.knots[-1])
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            below = self._t(mid) < x
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= tol):
                break
        y = 0.5 * (lo + hi)
        y = np.where(x < self.values[0], self.knots[0] + (x - self.values[0]) / self._slope_lo, y)
        return np.where(x > self.values[-1], self.knots[-1] + (x - self.values[-1]) / self._slope_hi, y)

    def forward(self, z):
        z = self._check(z)
        return self._t(z) if self.direction == "to_gaussian" else self._t_inv(z)

    def inverse(self, x):
        x = self._check(x)
        return self._t_inv(x) if self.direction == "to_gaussian" else self._t(x)

    def log_det_forward(self, z):
        z = self._check(z)
        if self.direction == "to_gaussian":
            return np.log(self._dt(z))[..., 0]
        return -np.log(self._dt(self._t_inv(z)))[..., 0]

    def log_det_inverse(self, x):
        x = self._check(x)
        if self.direction == "to_gaussian":
            return -np.log(self._dt(self._t_inv(x)))[..., 0]
        return np.log(self._dt(x))[..., 0]

    def vjp(self, z, v):
        return np.exp(self.log_det_forward(z))[..., None] * np.asarray(v, dtype=float)

    def grad_log_det_forward(self, z):
        z = self._check(z)
        if self.direction == "to_gaussian":
            return self._d2t(z) / self._dt(z)
        y = self._t_inv(z)
        dt = self._dt(y)
        return -self._d2t(y) / dt**2


# ---------------------------------------------------------------------------
# Push-forward and push-backward densities


def _check_dims(a, b):
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")


def push_forward_logpdf(base: TargetDistribution, tmap: TransportMap, x) -> np.ndarray:
    """log density of ``T(Z)``, ``Z ~ base``, at ``x``."""
    _check_dims(base, tmap)
    z, ld = tmap.inverse_and_log_det(x)
    return base.logpdf(z) + ld


def push_backward_logpdf(target: TargetDistribution, tmap: TransportMap, z) -> np.ndarray:
    """log density of ``T^{-1}(X)``, ``X ~ target``, at ``z``."""
    _check_dims(target, tmap)
    x, ld = tmap.forward_and_log_det(z)
    return target.logpdf(x) + ld


class PushForward(TargetDistribution):
    """The flow proposal: law of ``T(Z)`` with ``Z ~ base``."""

    def __init__(self, base: TargetDistribution, tmap: TransportMap):
        _check_dims(base, tmap)
        super().__init__(base.dim)
        self.base, self.map = base, tmap

    def _logpdf(self, x):
        return push_forward_logpdf(self.base, self.map, x)

    def sample_with_logpdf(self, rng, n):
        """Draw ``n`` points and return them with their log-densities,
        avoiding a second inverse pass."""
        z = self.base.sample(rng, n)
        x, ld = self.map.forward_and_log_det(z)
        return x, self.base.logpdf(z) - ld

    def _sample(self, rng, n):
        return self.map.forward(self.base.sample(rng, n))

    def sample_from_normals(self, xi):
        """Push standard normal draws through the base and the map.

        Returns the points and their log-densities. Requires a Gaussian base.
        """
        z = self.base.transform_normals(xi)
        x, ld = self.map.forward_and_log_det(z)
        return x, self.base.logpdf(z) - ld


class PushBackward(TargetDistribution):
    """The latent-space target of neutra samplers: law of ``T^{-1}(X)``."""

    def __init__(self, target: TargetDistribution, tmap: TransportMap):
        _check_dims(target, tmap)
        super().__init__(target.dim)
        self.target, self.map = target, tmap

    def _logpdf(self, z):
        return push_backward_logpdf(self.target, self.map, z)

    def _grad(self, z):
        x = self.map.forward(z)
        return self.map.pullback_score(z, self.target.grad_logpdf(x))

    def _sample(self, rng, n):
        return self.map.inverse(self.target.sample(rng, n))


# ---------------------------------------------------------------------------
# Diagnostics


def bilip_lower_bound_empirical(tmap: Bogachev1DMap, h: float = 1e-5) -> float:
    """``1 / T'(0)`` by central differences, a lower bound on the
    bi-Lipschitz constant of the mixture-to-Gaussian map."""
    if tmap.sigma_tilde != 1.0:
        raise ValueError("the bound is stated for a unit-variance Gaussian side")
    pts = np.array([[h], [-h]])
    t = tmap._t(pts)[:, 0]
    return float(2.0 * h / (t[0] - t[1]))


@dataclass(frozen=True)
class ConditionNumberResult:
    empirical: float
    analytic: float | None
    n_samples: int


def pushbackward_condition_number(target: TargetDistribution, tmap: TransportMap,
                                  n_samples: int, rng: np.random.Generator,
                                  chunk: int = 250_000) -> ConditionNumberResult:
    """Condition number of the covariance of ``T^{-1}(X)``, ``X ~ target``.

    Moments are accumulated chunk-wise so that millions of samples fit in
    memory. For a linear map and a Gaussian target the exact value
    ``cond(A^{-1} Sigma A^{-T})`` is also returned.
    """
    d = tmap.dim
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    remaining = int(n_samples)
    while remaining > 0:
        m = min(chunk, remaining)
        z = tmap.inverse(target.sample(rng, m))
        s1 += z.sum(axis=0)
        s2 += z.T @ z
        remaining -= m
    n = int(n_samples)
    mean = s1 / n
    cov = (s2 - n * np.outer(mean, mean)) / (n - 1)
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 0:
        raise np.linalg.LinAlgError("push-backward sample covariance is singular")
    analytic = None
    if isinstance(tmap, LinearMap) and isinstance(target, Gaussian):
        c = tmap.matrix_inv @ target.cov @ tmap.matrix_inv.T
        ev = np.linalg.eigvalsh(c)
        analytic = float(ev[-1] / ev[0])
    return ConditionNumberResult(float(eig[-1] / eig[0]), analytic, n)


def tabulate_map(tmap: TransportMap, grid) -> np.ndarray:
    """Rows ``(z, T(z), log|J_T(z)|)`` for a 1d map, or with ``z`` and
    ``T(z)`` flattened for higher dimensions."""
    z = np.asarray(grid, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    x, ld = tmap.forward_and_log_det(z)
    return np.column_stack([z, x, ld])
