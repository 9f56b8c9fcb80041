"""Independent reference implementations used as test oracles.

Everything here recomputes results by direct definition (explicit loops,
dense linear algebra, numerical differentiation) and never calls the fast
paths it is used to check.
"""

import numpy as np

from lpstereo.similarity import ScalarImage, gaussian_kernel1d, kernel_radius, similarity_energy


def naive_window_stats(I1: ScalarImage, I2: ScalarImage, sigma_w: float, eps: float):
    """Per-window weighted moments by direct double loop."""
    k1 = gaussian_kernel1d(sigma_w)
    r = kernel_radius(sigma_w)
    h, w = I1.data.shape
    mask = I1.valid_mask & I2.valid_mask
    out = {
        name: np.zeros((h, w))
        for name in ("mu1", "mu2", "v1", "v2", "v12", "omega")
    }
    for y in range(h):
        for x in range(w):
            sw = s1 = s2 = s11 = s22 = s12 = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w) or not mask[yy, xx]:
                        continue
                    wgt = k1[dy + r] * k1[dx + r]
                    a = I1.data[yy, xx]
                    b = I2.data[yy, xx]
                    sw += wgt
                    s1 += wgt * a
                    s2 += wgt * b
                    s11 += wgt * a * a
                    s22 += wgt * b * b
                    s12 += wgt * a * b
            out["omega"][y, x] = sw
            if sw > 0:
                mu1 = s1 / sw
                mu2 = s2 / sw
                out["mu1"][y, x] = mu1
                out["mu2"][y, x] = mu2
                out["v1"][y, x] = s11 / sw - mu1 * mu1 + eps
                out["v2"][y, x] = s22 / sw - mu2 * mu2 + eps
                out["v12"][y, x] = s12 / sw - mu1 * mu2
    return out


def naive_guided_filter(I1: ScalarImage, I2: ScalarImage, sigma_w: float, eps: float):
    """Per-window weighted linear regression of I1 on I2, then coefficient
    averaging over every window covering each pixel."""
    stats = naive_window_stats(I1, I2, sigma_w, eps)
    a = stats["v12"] / stats["v2"]
    b = stats["mu1"] - a * stats["mu2"]
    k1 = gaussian_kernel1d(sigma_w)
    r = kernel_radius(sigma_w)
    h, w = I1.data.shape
    mask = I1.valid_mask & I2.valid_mask
    q = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            sw = sa = sb = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w) or not mask[yy, xx]:
                        continue
                    wgt = k1[dy + r] * k1[dx + r]
                    sw += wgt
                    sa += wgt * a[yy, xx]
                    sb += wgt * b[yy, xx]
            if sw > 0:
                q[y, x] = (sa / sw) * I2.data[y, x] + sb / sw
    return q


def fd_energy_gradient(I1: ScalarImage, I2: ScalarImage, pixels, sigma_w, eps, h_step=1e-4):
    """Central finite differences of the registration energy w.r.t. I2 entries."""
    out = []
    for y, x in pixels:
        vals = []
        for sign in (+1.0, -1.0):
            bumped = I2.data.copy()
            bumped[y, x] += sign * h_step
            vals.append(similarity_energy(I1, ScalarImage(bumped, I2.valid_mask),
                                          sigma_w, eps))
        out.append((vals[0] - vals[1]) / (2.0 * h_step))
    return np.asarray(out)


def dense_quadratic_solve(X0, D_matrix, psi, beta):
    """Direct dense solve of (I + 2 beta D^T D) X = X0 + 2 beta D^T psi."""
    Dd = D_matrix.toarray()
    n = X0.shape[0]
    A = np.eye(n) + 2.0 * beta * Dd.T @ Dd
    return np.linalg.solve(A, X0 + 2.0 * beta * Dd.T @ psi)
