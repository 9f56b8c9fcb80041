"""Depth-map surface evolution by proximal alternation.

A per-pixel depth map over a reference camera parameterizes the surface.
Each iteration descends the registration energy (negative summed ZNCC of
the reference image against the auxiliary image warped through the current
depth) with the detail-preserving derivative supplying the image-space
factor of the chain rule, then regularizes the depth field; a coarse-to-fine
pyramid keeps the nonconvex problem on track. The regularizer is selectable:
the content-aware Lp machinery applied to the depth grid's 4-neighbor graph,
plain isotropic umbrella smoothing, or nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoise import DenoiseConfig, denoise_field, umbrella_smooth_positions
from .mesh import EdgeDifferentialOperator, edge_difference_matrix
from .similarity import (
    DEFAULT_EPS,
    DEFAULT_SIGMA_W,
    ScalarImage,
    _conv2,
    detail_preserving_derivative,
    gaussian_kernel1d,
    window_stats,
    zncc,
)


class EvolveError(Exception):
    """Surface evolution failed (stepsize underflow or invalid input)."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DepthMap:
    """Positive per-pixel depth over a reference camera."""

    depth: np.ndarray
    reference_view: str = "ref"

    def __post_init__(self):
        depth = np.ascontiguousarray(np.asarray(self.depth, dtype=np.float64))
        if depth.ndim != 2:
            raise EvolveError(f"depth must be 2D, got shape {depth.shape}")
        if not np.all(np.isfinite(depth)) or not np.all(depth > 0):
            raise EvolveError("depths must be positive and finite")
        object.__setattr__(self, "depth", _freeze(depth))

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise EvolveError("focal lengths must be positive")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        # Coarse pixel i samples fine pixel i/factor, so centers scale linearly.
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor
        )


@dataclass(frozen=True)
class CameraPair:
    """Reference and auxiliary pinhole cameras with their relative pose.

    rotation/translation map reference-camera coordinates to auxiliary
    camera coordinates: X_aux = R X_ref + t.
    """

    reference: CameraIntrinsics
    auxiliary: CameraIntrinsics
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64))
        if R.shape != (3, 3) or t.shape != (3,):
            raise EvolveError("rotation must be 3x3 and translation length 3")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-10:
            raise EvolveError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", _freeze(R))
        object.__setattr__(self, "translation", _freeze(t))

    def scaled(self, factor: float) -> "CameraPair":
        return CameraPair(
            self.reference.scaled(factor),
            self.auxiliary.scaled(factor),
            self.rotation,
            self.translation,
        )


@dataclass(frozen=True)
class EvolveConfig:
    """Stepsize, pyramid, variance-constraint schedule and regularizer choice.

    eta = None picks 0.5 * depth_scale / max|gradient| at the start of each
    level. The divergence guard halves eta after 5 consecutive energy
    increases and aborts if eta underflows 1e-12.
    """

    eta: float | None = None
    levels: int = 3
    iters_per_level: int = 60
    kappa0: float = 0.05
    kappa_growth: float = 1.5
    kappa_max: float = 1.0
    regularizer: str = "content_aware_lp"
    regularize_every: int = 1
    sigma_w: float = DEFAULT_SIGMA_W
    eps: float = DEFAULT_EPS
    iso_tau: float = 0.8
    iso_iters: int = 1
    reg_config: DenoiseConfig | None = None

    def __post_init__(self):
        if self.eta is not None and self.eta <= 0:
            raise EvolveError("eta must be positive")
        if self.levels < 1:
            raise EvolveError("levels must be >= 1")
        if self.regularizer not in ("content_aware_lp", "isotropic", "none"):
            raise EvolveError(f"unknown regularizer {self.regularizer!r}")


def _bilinear(arr, mask, u, v, with_grad=False):
    """Bilinear sample of arr at (u, v); invalid outside or on masked corners.

    Gradients, when requested, are the exact derivatives of the bilinear
    interpolant, which is what the chain rule differentiates.
    """
    h, w = arr.shape
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    inside = (x0 >= 0) & (x0 + 1 <= w - 1) & (y0 >= 0) & (y0 + 1 <= h - 1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    fx = u - x0c
    fy = v - y0c
    i00 = arr[y0c, x0c]
    i10 = arr[y0c, x0c + 1]
    i01 = arr[y0c + 1, x0c]
    i11 = arr[y0c + 1, x0c + 1]
    valid = inside & (
        mask[y0c, x0c] & mask[y0c, x0c + 1] & mask[y0c + 1, x0c] & mask[y0c + 1, x0c + 1]
    )
    val = (
        (1 - fx) * (1 - fy) * i00
        + fx * (1 - fy) * i10
        + (1 - fx) * fy * i01
        + fx * fy * i11
    )
    val = np.where(valid, val, 0.0)
    if not with_grad:
        return val, valid
    du = (1 - fy) * (i10 - i00) + fy * (i11 - i01)
    dv = (1 - fx) * (i01 - i00) + fx * (i11 - i10)
    return val, valid, np.where(valid, du, 0.0), np.where(valid, dv, 0.0)


def _warp_coords(depth: np.ndarray, cams: CameraPair):
    """Auxiliary-image coordinates of each reference pixel plus depth Jacobian."""
    h, w = depth.shape
    ref = cams.reference
    aux = cams.auxiliary
    px, py = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    rays = np.stack(
        [(px - ref.cx) / ref.fx, (py - ref.cy) / ref.fy, np.ones_like(px)], axis=-1
    )
    s = rays @ cams.rotation.T  # rotated ray directions
    t = cams.translation
    X = depth[..., None] * s + t
    Z = X[..., 2]
    front = Z > 0
    Zs = np.where(front, Z, 1.0)
    u = aux.fx * X[..., 0] / Zs + aux.cx
    v = aux.fy * X[..., 1] / Zs + aux.cy
    du_dd = aux.fx * (s[..., 0] * Zs - X[..., 0] * s[..., 2]) / Zs**2
    dv_dd = aux.fy * (s[..., 1] * Zs - X[..., 1] * s[..., 2]) / Zs**2
    return u, v, front, du_dd, dv_dd


def predict_image(I_aux: ScalarImage, depth: DepthMap, cams: CameraPair) -> ScalarImage:
    """Warp the auxiliary image into the reference view through the depth map.

    Reference pixels whose back-projection lands outside the auxiliary frame
    (or behind the camera) are masked invalid.
    """
    u, v, front, _, _ = _warp_coords(depth.depth, cams)
    val, valid = _bilinear(I_aux.data, I_aux.valid_mask, u, v)
    return ScalarImage(np.where(front, val, 0.0), valid & front)


def _gradient_and_energy(I_ref, I_aux, depth_arr, cams, kappa, sigma_w, eps):
    u, v, front, du_dd, dv_dd = _warp_coords(depth_arr, cams)
    val, valid, gu, gv = _bilinear(I_aux.data, I_aux.valid_mask, u, v, with_grad=True)
    valid = valid & front
    predicted = ScalarImage(np.where(valid, val, 0.0), valid)
    stats = window_stats(I_ref, predicted, sigma_w, eps)
    deriv = detail_preserving_derivative(I_ref, predicted, stats, kappa)
    dI_dd = gu * du_dd + gv * dv_dd
    grad = np.where(valid, deriv.d2m * dI_dd, 0.0)
    energy = float(-np.sum(zncc(stats).data[stats.mask]))
    return grad, energy, predicted


def data_gradient(
    I_ref: ScalarImage,
    I_aux: ScalarImage,
    depth: DepthMap,
    cams: CameraPair,
    kappa: float = 0.0,
    sigma_w: float = DEFAULT_SIGMA_W,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Gradient of the registration energy with respect to per-pixel depth.

    Chain rule: image-space derivative of the similarity (d2m', including
    the variance-constraint term for kappa > 0) times the gradient of the
    warped image times the depth Jacobian of the warp. Masked pixels get 0.
    """
    grad, _, _ = _gradient_and_energy(
        I_ref, I_aux, depth.depth, cams, kappa, sigma_w, eps
    )
    return grad


def downsample_image(img: ScalarImage) -> ScalarImage:
    """Factor-2 Gaussian pyramid step (blur then take even pixels)."""
    k = gaussian_kernel1d(1.0)
    maskf = img.valid_mask.astype(np.float64)
    num = _conv2(img.data * maskf, k)
    den = np.maximum(_conv2(maskf, k), 1e-30)
    blurred = num / den
    return ScalarImage(blurred[::2, ::2], img.valid_mask[::2, ::2])


def _bilinear_resize(arr: np.ndarray, shape: tuple[int, int], factor: float) -> np.ndarray:
    """Upsample a coarse array so fine pixel x reads coarse coordinate x/factor."""
    h, w = shape
    ch, cw = arr.shape
    xs = np.arange(w, dtype=np.float64) / factor
    ys = np.arange(h, dtype=np.float64) / factor
    xs = np.clip(xs, 0, cw - 1)
    ys = np.clip(ys, 0, ch - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, cw - 2) if cw > 1 else np.zeros(w, np.int64)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, ch - 2) if ch > 1 else np.zeros(h, np.int64)
    fx = xs - x0 if cw > 1 else np.zeros(w)
    fy = ys - y0 if ch > 1 else np.zeros(h)
    x1 = np.minimum(x0 + 1, cw - 1)
    y1 = np.minimum(y0 + 1, ch - 1)
    top = arr[np.ix_(y0, x0)] * (1 - fx) + arr[np.ix_(y0, x1)] * fx
    bot = arr[np.ix_(y1, x0)] * (1 - fx) + arr[np.ix_(y1, x1)] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def grid_edges(h: int, w: int) -> np.ndarray:
    """4-neighbor edge list of an h x w pixel grid (row-major vertex ids)."""
    idx = np.arange(h * w).reshape(h, w)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.concatenate([horiz, vert], axis=0)


def _regularize(depth_arr, config: EvolveConfig, grid_op):
    """One proximal regularization step on the depth grid.

    The content-aware path refits (sigma, theta, p) on the current field
    every call: sigma reads the incoherent error injected by the data
    steps, so the prox strength self-limits as the field converges.
    """
    h, w = depth_arr.shape
    if config.regularizer == "isotropic":
        f = umbrella_smooth_positions(
            depth_arr.ravel(), grid_edges(h, w), tau=config.iso_tau,
            iters=config.iso_iters,
        )
        return f.reshape(h, w)
    reg_cfg = config.reg_config or DenoiseConfig(
        outer_iters=1, inner_iters=1, beta_growth=4.0, beta_span=10.0
    )
    f, _, _ = denoise_field(depth_arr.ravel(), grid_op, reg_cfg)
    return f.reshape(h, w)


def evolve(
    I_ref: ScalarImage,
    I_aux,
    depth0: DepthMap,
    cams,
    config: EvolveConfig | None = None,
) -> tuple[DepthMap, list[dict]]:
    """Coarse-to-fine gradient descent on the registration energy.

    Per pyramid level: repeat a data-term step followed by the selected
    regularization; upsample bilinearly between levels. The variance
    constraint weight kappa advances per level. Returns the refined depth
    and a per-iteration diagnostics trace.

    I_aux/cams may be a single auxiliary view with its camera pair or
    parallel sequences of several; with several, per-view gradients and
    energies are summed.
    """
    config = config or EvolveConfig()
    if I_ref.data.shape != depth0.depth.shape:
        raise EvolveError("depth dimensions must match the reference image")
    aux_views = [I_aux] if isinstance(I_aux, ScalarImage) else list(I_aux)
    cam_pairs = [cams] if isinstance(cams, CameraPair) else list(cams)
    if len(aux_views) != len(cam_pairs) or not aux_views:
        raise EvolveError("need one camera pair per auxiliary view")

    # image pyramids, coarsest last; level k carries the 2^-k scale
    refs = [I_ref]
    auxs = [aux_views]
    for _ in range(config.levels - 1):
        if min(refs[-1].data.shape) < 16:
            break
        refs.append(downsample_image(refs[-1]))
        auxs.append([downsample_image(a) for a in auxs[-1]])
    cams_pyr = [[c.scaled(0.5**k) for c in cam_pairs] for k in range(len(refs))]

    depth = depth0.depth[:: 2 ** (len(refs) - 1), :: 2 ** (len(refs) - 1)].copy()
    diagnostics: list[dict] = []
    depth_floor = 1e-3 * float(np.median(depth0.depth))
    # stepsize scale from the *initial* depth: intermediate damage at an
    # information-poor level must not inflate later steps
    step_scale = max(float(np.ptp(depth0.depth)), 0.05 * float(np.median(depth0.depth)))

    for level in range(len(refs) - 1, -1, -1):
        ref_l, aux_l, cams_l = refs[level], auxs[level], cams_pyr[level]
        if depth.shape != ref_l.data.shape:
            depth = _bilinear_resize(depth, ref_l.data.shape, 2.0)
        kappa = min(
            config.kappa0 * config.kappa_growth ** (len(refs) - 1 - level),
            config.kappa_max,
        )
        h, w = depth.shape
        grid_op = EdgeDifferentialOperator(
            rows=2 * h * w - h - w, cols=h * w,
            matrix=edge_difference_matrix(grid_edges(h, w), h * w),
        )
        eta = config.eta
        prev_energy = np.inf
        rising = 0
        for it in range(config.iters_per_level):
            grad = np.zeros_like(depth)
            energy = 0.0
            for aux_v, cams_v in zip(aux_l, cams_l):
                g_v, e_v, _ = _gradient_and_energy(
                    ref_l, aux_v, depth, cams_v, kappa, config.sigma_w, config.eps
                )
                grad += g_v
                energy += e_v
            if eta is None:
                gmax = float(np.max(np.abs(grad)))
                eta = 0.5 * step_scale / gmax if gmax > 0 else 1.0
            if energy > prev_energy:
                rising += 1
                if rising >= 5:
                    eta *= 0.5
                    rising = 0
                    if eta < 1e-12:
                        raise EvolveError(
                            f"stepsize underflow at level {level}, iter {it}"
                        )
            else:
                rising = 0
            prev_energy = energy
            depth = np.maximum(depth - eta * grad, depth_floor)
            if config.regularizer != "none" and (it + 1) % config.regularize_every == 0:
                smoothed = np.maximum(_regularize(depth, config, grid_op), depth_floor)
                # trust region: a prox step that rewrites the field outright
                # (information-starved coarse levels) is rejected
                limit = max(float(np.ptp(depth)), 0.05 * float(np.median(depth)))
                if float(np.max(np.abs(smoothed - depth))) <= limit:
                    depth = smoothed
            diagnostics.append(
                {"level": level, "iter": it, "eta": eta, "energy": energy,
                 "kappa": kappa}
            )
    return DepthMap(depth, depth0.reference_view), diagnostics
