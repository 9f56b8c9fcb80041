"""Windowed image statistics, ZNCC similarity, its derivative, and the
guided-filter bridge.

All windowed moments use a truncated Gaussian kernel with zero-fill outside
the valid domain and a per-pixel kernel-mass normalizer omega, so partial
windows at image borders or mask boundaries are renormalized rather than
padded. The registration energy is the negative sum of windowed ZNCC over
the valid domain: the derivative field produced here is its exact gradient
with respect to the second (predicted) image, which is what the surface
evolution descends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

DEFAULT_SIGMA_W = 1.5  # 7x7 truncated support
DEFAULT_EPS = 1e-4

_OMEGA_TINY = 1e-30


class ImageError(Exception):
    """Image shape or domain mismatch."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScalarImage:
    """2D scalar raster in [0, 1] with a per-pixel validity mask."""

    data: np.ndarray
    valid_mask: np.ndarray = None

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2:
            raise ImageError(f"image data must be 2D, got shape {data.shape}")
        mask = self.valid_mask
        if mask is None:
            mask = np.ones(data.shape, dtype=bool)
        else:
            mask = np.ascontiguousarray(np.asarray(mask, dtype=bool))
            if mask.shape != data.shape:
                raise ImageError("valid_mask shape differs from data shape")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "valid_mask", _freeze(mask))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def kernel_radius(sigma_w: float) -> int:
    """Truncation radius of the Gaussian window (2 sigma, >= 1)."""
    return max(1, int(math.ceil(2.0 * sigma_w)))


def gaussian_kernel1d(sigma_w: float) -> np.ndarray:
    r = kernel_radius(sigma_w)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_w) ** 2)
    return k / k.sum()


def _conv2(fieldarr: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    out = convolve1d(fieldarr, k1d, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, k1d, axis=1, mode="constant", cval=0.0)


@dataclass(frozen=True)
class WindowStats:
    """Per-pixel windowed moments of an image pair.

    v1 and v2 carry the +eps stabilizer; v12 does not. omega is the kernel
    mass accumulated over valid pixels (1 in a fully valid interior). The
    kernel scale and eps travel with the stats so derivative computations
    reuse the same window.
    """

    mu1: np.ndarray
    mu2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    v12: np.ndarray
    omega: np.ndarray
    mask: np.ndarray
    sigma_w: float
    eps: float


def window_stats(
    I1: ScalarImage,
    I2: ScalarImage,
    sigma_w: float = DEFAULT_SIGMA_W,
    eps: float = DEFAULT_EPS,
) -> WindowStats:
    """Windowed means, variances and covariance of an image pair.

    Masked pixels are zero-filled in every convolution; omega accumulates
    kernel mass over valid pixels only, so partial windows renormalize.
    """
    if I1.data.shape != I2.data.shape:
        raise ImageError(
            f"image dimensions differ: {I1.data.shape} vs {I2.data.shape}"
        )
    if eps < 0:
        raise ImageError("eps must be >= 0")
    k = gaussian_kernel1d(sigma_w)
    mask = I1.valid_mask & I2.valid_mask
    maskf = mask.astype(np.float64)
    a = I1.data * maskf
    b = I2.data * maskf
    omega = _conv2(maskf, k)
    w = np.maximum(omega, _OMEGA_TINY)
    mu1 = _conv2(a, k) / w
    mu2 = _conv2(b, k) / w
    v1 = _conv2(a * a, k) / w - mu1**2 + eps
    v2 = _conv2(b * b, k) / w - mu2**2 + eps
    v12 = _conv2(a * b, k) / w - mu1 * mu2
    return WindowStats(
        mu1=_freeze(mu1), mu2=_freeze(mu2),
        v1=_freeze(v1), v2=_freeze(v2), v12=_freeze(v12),
        omega=_freeze(omega), mask=_freeze(mask),
        sigma_w=sigma_w, eps=eps,
    )


def zncc(stats: WindowStats) -> ScalarImage:
    """Windowed zero-mean normalized cross-correlation v12 / sqrt(v1 v2)."""
    m = stats.v12 / np.sqrt(stats.v1 * stats.v2)
    m = np.where(stats.mask, m, 0.0)
    return ScalarImage(m, stats.mask)


def similarity_energy(
    I1: ScalarImage,
    I2: ScalarImage,
    sigma_w: float = DEFAULT_SIGMA_W,
    eps: float = DEFAULT_EPS,
) -> float:
    """Registration energy: negative sum of windowed ZNCC over the valid domain.

    Lower is better registered; the derivative fields below are its exact
    gradient with respect to I2.
    """
    stats = window_stats(I1, I2, sigma_w, eps)
    m = zncc(stats)
    return float(-np.sum(m.data[stats.mask]))


@dataclass(frozen=True)
class SimilarityDerivativeField:
    """Linear-structure decomposition of the similarity-energy gradient.

    d2m = alpha * I1 + beta_coef * I2 + gamma + kappa * variance_term,
    evaluated pointwise. kappa = 0 reproduces the plain ZNCC derivative;
    variance_term is the smoothed variance-constraint field (v2 - v1) / v2.
    """

    alpha: np.ndarray
    beta_coef: np.ndarray
    gamma: np.ndarray
    d2m: np.ndarray
    kappa: float
    variance_term: np.ndarray
    mask: np.ndarray


def _derivative_pieces(I1, I2, stats):
    k = gaussian_kernel1d(stats.sigma_w)
    maskf = stats.mask.astype(np.float64)
    rootv = np.sqrt(stats.v1 * stats.v2)
    w = np.maximum(stats.omega, _OMEGA_TINY)
    g = stats.v12 / rootv  # the ZNCC field
    alpha = _conv2(-maskf / (w * rootv), k)
    beta_coef = _conv2(maskf * g / (w * stats.v2), k)
    gamma = _conv2(
        maskf * (stats.mu1 / (w * rootv) - stats.mu2 * g / (w * stats.v2)), k
    )
    return alpha, beta_coef, gamma


def zncc_derivative(
    I1: ScalarImage, I2: ScalarImage, stats: WindowStats
) -> SimilarityDerivativeField:
    """Exact gradient of the registration energy with respect to I2.

    Perturbing one pixel of I2 affects every window containing it, so the
    coefficient images are windowed sums over neighboring window centers;
    the support of a single-pixel perturbation is the 2w x 2w neighborhood
    for a truncated kernel of radius w.
    """
    alpha, beta_coef, gamma = _derivative_pieces(I1, I2, stats)
    d2m = alpha * I1.data + beta_coef * I2.data + gamma
    d2m = np.where(stats.mask, d2m, 0.0)
    zero = np.zeros_like(d2m)
    return SimilarityDerivativeField(
        alpha=_freeze(alpha), beta_coef=_freeze(beta_coef), gamma=_freeze(gamma),
        d2m=_freeze(d2m), kappa=0.0, variance_term=_freeze(zero), mask=stats.mask,
    )


def detail_preserving_derivative(
    I1: ScalarImage, I2: ScalarImage, stats: WindowStats, kappa: float
) -> SimilarityDerivativeField:
    """ZNCC derivative plus the variance-constraint term.

    Adds kappa * G * ((v2 - v1) / v2), which pushes the predicted image
    toward matching the local variance of the observed one and gives the
    measure its edge-preserving behavior. kappa = 0 reduces exactly to
    zncc_derivative.
    """
    if kappa < 0:
        raise ImageError("kappa must be >= 0")
    base = zncc_derivative(I1, I2, stats)
    k = gaussian_kernel1d(stats.sigma_w)
    maskf = stats.mask.astype(np.float64)
    vterm = _conv2(maskf * (stats.v2 - stats.v1) / stats.v2, k)
    d2m = np.where(stats.mask, base.d2m + kappa * vterm, 0.0)
    return SimilarityDerivativeField(
        alpha=base.alpha, beta_coef=base.beta_coef, gamma=base.gamma,
        d2m=_freeze(d2m), kappa=kappa, variance_term=_freeze(vterm), mask=stats.mask,
    )


def guided_filter(
    I1: ScalarImage,
    I2: ScalarImage,
    sigma_w: float = DEFAULT_SIGMA_W,
    eps: float = DEFAULT_EPS,
) -> ScalarImage:
    """Guided filtering of I1 under guidance I2.

    Fits the local linear model Q = a I2 + b per window (a = v12 / v2,
    b = mu1 - a mu2) and averages the coefficients over all windows
    covering each pixel before applying the map.
    """
    stats = window_stats(I1, I2, sigma_w, eps)
    k = gaussian_kernel1d(sigma_w)
    maskf = stats.mask.astype(np.float64)
    w = np.maximum(stats.omega, _OMEGA_TINY)
    a = stats.v12 / stats.v2
    b = stats.mu1 - a * stats.mu2
    q = (_conv2(a * maskf, k) / w) * I2.data + _conv2(b * maskf, k) / w
    q = np.where(stats.mask, q, 0.0)
    return ScalarImage(q, stats.mask)


def _interior_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    interior = np.zeros_like(mask)
    if mask.shape[0] > 2 * radius and mask.shape[1] > 2 * radius:
        interior[radius:-radius, radius:-radius] = True
    return interior & mask


def bridge_identity_residual(
    I1: ScalarImage,
    I2: ScalarImage,
    sigma_w: float = DEFAULT_SIGMA_W,
    eps: float = DEFAULT_EPS,
) -> float:
    """Exact algebraic check of the derivative/guided-filter connection.

    With v1 forced equal to v2 in the derivative formulas, the derivative
    field satisfies

        d2m + (G * (1/(omega v2))) I1
            = (G * (v12/(omega v2^2))) I2 + G * ((v2 mu1 - v12 mu2)/(omega v2^2))

    identically; the return value is the max interior |LHS - RHS|, which is
    floating-point roundoff by construction.
    """
    stats = window_stats(I1, I2, sigma_w, eps)
    k = gaussian_kernel1d(sigma_w)
    maskf = stats.mask.astype(np.float64)
    w = np.maximum(stats.omega, _OMEGA_TINY)
    v2 = stats.v2
    g = stats.v12 / v2  # ZNCC with v1 forced to v2
    d2m_forced = (
        _conv2(-maskf / (w * v2), k) * I1.data
        + _conv2(maskf * g / (w * v2), k) * I2.data
        + _conv2(maskf * (stats.mu1 / (w * v2) - stats.mu2 * g / (w * v2)), k)
    )
    lhs = d2m_forced + _conv2(maskf / (w * v2), k) * I1.data
    rhs = (
        _conv2(maskf * stats.v12 / (w * v2**2), k) * I2.data
        + _conv2(maskf * (v2 * stats.mu1 - stats.v12 * stats.mu2) / (w * v2**2), k)
    )
    interior = _interior_mask(stats.mask, kernel_radius(sigma_w))
    if not interior.any():
        raise ImageError("image too small for an interior region")
    return float(np.max(np.abs(lhs - rhs)[interior]))


def registration_approximation_residual(
    I1: ScalarImage,
    I2: ScalarImage,
    sigma_w: float = DEFAULT_SIGMA_W,
    eps: float = DEFAULT_EPS,
) -> float:
    """Interior max of |I1 + v2 * d2m - Q|: guided filtering viewed as one
    registration step of stepsize v2. Approximate (no forcing), so the
    residual is small only when v1 and v2 are already close."""
    stats = window_stats(I1, I2, sigma_w, eps)
    d = zncc_derivative(I1, I2, stats)
    q = guided_filter(I1, I2, sigma_w, eps)
    interior = _interior_mask(stats.mask, kernel_radius(sigma_w))
    if not interior.any():
        raise ImageError("image too small for an interior region")
    gap = I1.data + stats.v2 * d.d2m - q.data
    return float(np.max(np.abs(gap[interior])))
