"""Sample-quality metrics: sliced TV and KS distances, R-hat, mode histograms
and per-mode Gaussian KL."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .distributions import TargetDistribution, closest_mode


@dataclass(frozen=True)
class SlicedMetricConfig:
    n_projections: int = 128
    bandwidth: str = "scott"
    grid_size: int = 2048
    reference_oversize: int = 10

    def __post_init__(self):
        if self.n_projections < 1:
            raise ValueError("n_projections must be >= 1")
        if self.bandwidth not in ("scott", "silverman"):
            raise ValueError("bandwidth must be 'scott' or 'silverman'")
        if self.grid_size < 16:
            raise ValueError("grid_size too small")


@dataclass
class SlicedResult:
    value: float
    per_projection: np.ndarray
    skipped: int = 0


def _weights(w, n):
    if w is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def _weighted_std(x, w):
    m = np.dot(w, x)
    return float(np.sqrt(max(np.dot(w, (x - m) ** 2), 0.0)))


def _weighted_quantile(x, w, q):
    order = np.argsort(x)
    cw = np.cumsum(w[order])
    return float(np.interp(q, cw - 0.5 * w[order], x[order]))


def kde_bandwidth(x, w=None, rule: str = "scott", floor: float = 0.0) -> float:
    """Gaussian-KDE bandwidth for 1d data.

    Scott's rule ``std * n_eff^(-1/5)`` (``n_eff`` is the Kish effective
    size for weighted data). When it collapses below ``floor``, the
    Silverman rule with the interquartile range is tried instead.
    """
    x = np.asarray(x, dtype=float)
    w = _weights(w, x.size)
    n_eff = 1.0 / np.sum(w * w)
    std = _weighted_std(x, w)
    iqr = _weighted_quantile(x, w, 0.75) - _weighted_quantile(x, w, 0.25)
    silverman = 0.9 * min(std, iqr / 1.34) * n_eff**-0.2 if iqr > 0 else 0.9 * std * n_eff**-0.2
    h = std * n_eff**-0.2 if rule == "scott" else silverman
    if h <= floor:
        h = silverman
    return h


def _binned_kde(x, w, h, lo, dx, g):
    """Gaussian KDE on a uniform grid via linear binning and FFT convolution."""
    pos = (x - lo) / dx
    i = np.clip(np.floor(pos).astype(int), 0, g - 2)
    frac = np.clip(pos - i, 0.0, 1.0)
    counts = np.bincount(i, w * (1.0 - frac), minlength=g) + np.bincount(i + 1, w * frac, minlength=g)
    half = min(g - 1, int(np.ceil(8.0 * h / dx)))
    offs = np.arange(-half, half + 1) * dx
    kernel = np.exp(-0.5 * (offs / h) ** 2)
    dens = fftconvolve(counts, kernel, mode="same")
    dens = np.maximum(dens, 0.0)
    total = np.trapezoid(dens, dx=dx)
    return dens / total


def tv_1d(a, b, wa=None, wb=None, rule: str = "scott", grid_size: int = 2048) -> float | None:
    """Half the L1 distance between Gaussian KDEs of two 1d samples.

    Returns ``None`` if the pooled data has no spread.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    wa, wb = _weights(wa, a.size), _weights(wb, b.size)
    pooled_min = min(a.min(), b.min())
    pooled_max = max(a.max(), b.max())
    span = pooled_max - pooled_min
    if not span > 0:
        return None
    floor = 1e-8 * span
    ha = kde_bandwidth(a, wa, rule, floor)
    hb = kde_bandwidth(b, wb, rule, floor)
    # a sample with no spread at all becomes a spike one grid step wide
    provisional_dx = (span + 6.0 * max(ha, hb)) / (grid_size - 1)
    ha, hb = max(ha, provisional_dx), max(hb, provisional_dx)
    hmax = max(ha, hb)
    lo = pooled_min - 3.0 * hmax
    hi = pooled_max + 3.0 * hmax
    dx = (hi - lo) / (grid_size - 1)
    fa = _binned_kde(a, wa, ha, lo, dx, grid_size)
    fb = _binned_kde(b, wb, hb, lo, dx, grid_size)
    return float(min(1.0, 0.5 * np.trapezoid(np.abs(fa - fb), dx=dx)))


def ks_1d(a, b, wa=None, wb=None) -> float:
    """Exact two-sample Kolmogorov-Smirnov statistic, optionally weighted.

    Without weights the ECDF gap is evaluated on integer counts,
    ``max |k m - j n| / (n m)``, so the result is the correctly rounded
    rational value and does not change when both samples are reflected.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    oa, ob = np.argsort(a, kind="stable"), np.argsort(b, kind="stable")
    a_s, b_s = a[oa], b[ob]
    pts = np.unique(np.concatenate([a_s, b_s]))
    ka = np.searchsorted(a_s, pts, side="right")
    kb = np.searchsorted(b_s, pts, side="right")
    if wa is None and wb is None:
        n, m = a.size, b.size
        gap = int(np.max(np.abs(ka.astype(np.int64) * m - kb.astype(np.int64) * n)))
        return gap / (n * m)
    wa, wb = _weights(wa, a.size), _weights(wb, b.size)
    ca = np.concatenate([[0.0], np.cumsum(wa[oa])])
    cb = np.concatenate([[0.0], np.cumsum(wb[ob])])
    return float(np.max(np.abs(ca[ka] - cb[kb])))


def _mean(vals) -> float:
    # offset by the first value so identical per-projection values average exactly
    v = np.asarray(vals, dtype=float)
    return float(v[0] + np.mean(v - v[0]))


def _projections(d, cfg, rng):
    return rng.standard_normal((cfg.n_projections, d))


def sliced_tv(samples_a, samples_b, cfg: SlicedMetricConfig | None = None,
              rng: np.random.Generator | None = None, weights_a=None, weights_b=None,
              full: bool = False):
    """Mean over random normal projections of the KDE total variation.

    Args:
        samples_a: ``(N, d)`` evaluated samples.
        samples_b: ``(M, d)`` reference samples, ideally ``M >= 10 N``.
        cfg: Projection count, bandwidth rule and grid size.
        rng: Generator for the projections.
        weights_a, weights_b: Optional importance weights.
        full: Return a ``SlicedResult`` with per-projection values.
    """
    cfg = cfg or SlicedMetricConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    a, b = np.atleast_2d(samples_a), np.atleast_2d(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets have different dimensions")
    if b.shape[0] < cfg.reference_oversize * a.shape[0] and a.shape[0] < cfg.reference_oversize * b.shape[0]:
        warnings.warn("reference set smaller than the recommended oversize factor", RuntimeWarning)
    vals, skipped = [], 0
    for p in _projections(a.shape[1], cfg, rng):
        v = tv_1d(a @ p, b @ p, weights_a, weights_b, cfg.bandwidth, cfg.grid_size)
        if v is None:
            skipped += 1
            continue
        vals.append(v)
    if skipped:
        warnings.warn(f"skipped {skipped} degenerate projections", RuntimeWarning)
    if not vals:
        raise ValueError("every projection was degenerate")
    res = SlicedResult(_mean(vals), np.array(vals), skipped)
    return res if full else res.value


def sliced_ks(samples_a, samples_b, cfg: SlicedMetricConfig | None = None,
              rng: np.random.Generator | None = None, weights_a=None, weights_b=None,
              full: bool = False):
    """Mean over random normal projections of the exact two-sample KS statistic."""
    cfg = cfg or SlicedMetricConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    a, b = np.atleast_2d(samples_a), np.atleast_2d(samples_b)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    vals = np.array([ks_1d(a @ p, b @ p, weights_a, weights_b) for p in _projections(a.shape[1], cfg, rng)])
    res = SlicedResult(_mean(vals), vals)
    return res if full else res.value


def r_hat(chains, split: bool = True) -> float:
    """Potential scale reduction factor, maximized over dimensions.

    Args:
        chains: ``(K, T)`` or ``(K, T, d)`` array.
        split: Cut every chain in two halves first (needs ``T >= 4``).
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    k, t, _ = x.shape
    if k < 2 and not split:
        raise ValueError("need at least two chains")
    if t < 4:
        raise ValueError("need at least 4 steps per chain")
    if split:
        h = t // 2
        x = np.concatenate([x[:, :h], x[:, t - h:]], axis=0)
        t = h
    means = x.mean(axis=1)
    b = t * np.var(means, axis=0, ddof=1)
    w = np.mean(np.var(x, axis=1, ddof=1), axis=0)
    if np.any(w == 0):
        warnings.warn("zero within-chain variance; R-hat is infinite", RuntimeWarning)
        return float("inf")
    return float(np.max(np.sqrt((t - 1) / t + b / (t * w))))


def mode_histograms(chains, target: TargetDistribution) -> np.ndarray:
    """Per-chain visit frequencies of the closest mode, shape ``(K, m)``."""
    x = np.asarray(chains, dtype=float)
    m = len(target.mode_locations)
    idx = closest_mode(target, x)
    counts = np.stack([np.bincount(row, minlength=m) for row in idx.reshape(x.shape[0], -1)])
    return counts / counts.sum(axis=1, keepdims=True)


def mode_histogram_mse(chains, target: TargetDistribution) -> float:
    """Median over chains of ``sum_j (p_j - 1/m)^2``."""
    p = mode_histograms(chains, target)
    se = np.sum((p - 1.0 / p.shape[1]) ** 2, axis=1)
    return float(np.median(se))


def gaussian_kl(mu0, cov0, mu1, cov1) -> float:
    """KL(N(mu0, cov0) || N(mu1, cov1))."""
    d = len(mu0)
    c1 = np.linalg.cholesky(cov1)
    inv_c1 = np.linalg.inv(c1)
    prec1 = inv_c1.T @ inv_c1
    diff = np.asarray(mu1) - np.asarray(mu0)
    logdet1 = 2.0 * np.sum(np.log(np.diag(c1)))
    _, logdet0 = np.linalg.slogdet(cov0)
    return float(0.5 * (np.trace(prec1 @ cov0) + diff @ prec1 @ diff - d + logdet1 - logdet0))


def per_mode_forward_kl(samples, target, reg: float = 1e-6) -> float:
    """Average of ``KL(N(mu_i, s^2 I) || fitted Gaussian)`` over modes.

    Samples (any leading shape) are split by closest mode; each segment
    gets a Gaussian fit with ``reg`` added to the covariance diagonal.
    Segments with fewer than ``d + 2`` points are skipped with a warning.
    """
    x = np.asarray(samples, dtype=float).reshape(-1, target.dim)
    modes = target.mode_locations
    sigma = getattr(target, "sigma", 1.0)
    d = target.dim
    idx = closest_mode(target, x)
    kls = []
    for j, mu in enumerate(modes):
        seg = x[idx == j]
        if len(seg) < d + 2:
            warnings.warn(f"mode {j} has {len(seg)} samples; skipped", RuntimeWarning)
            continue
        cov = np.atleast_2d(np.cov(seg, rowvar=False)) + reg * np.eye(d)
        kls.append(gaussian_kl(mu, sigma**2 * np.eye(d), seg.mean(axis=0), cov))
    if not kls:
        raise ValueError("no mode has enough samples")
    return float(np.mean(kls))
