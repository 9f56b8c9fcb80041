"""Synthetic meshes and stereo scenes for experiments and tests.

All randomness flows from one 64-bit seed through a splitmix64 state
advance: sub-streams are derived by advancing the master state, and the
procedural texture hashes lattice points with the same mixer, so every
artifact is bit-reproducible from (kind, resolution, noise, seed) alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evolve import CameraIntrinsics, CameraPair, DepthMap
from .mesh import TriangleMesh, crease_edges_by_threshold
from .similarity import ScalarImage

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, mixed output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Sub-seed for the given stream index, derived by splitmix64 advances."""
    state = seed & _MASK64
    out = 0
    for _ in range(stream + 1):
        state, out = splitmix64(state)
    return out


def _hash_lattice(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """splitmix64-mixed lattice hash mapped to [0, 1)."""
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         + iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         + np.uint64(seed & _MASK64))
    z = h
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise_at(xs: np.ndarray, ys: np.ndarray, cell: float, seed: int) -> np.ndarray:
    """Procedural value noise at arbitrary coordinates, in [0, 1].

    Lattice values are hashed from integer cell corners and blended with a
    quintic smoothstep, so the field is C^2, band-limited at the cell scale,
    and has nonzero gradient almost everywhere.
    """
    xs = np.asarray(xs, dtype=np.float64) / cell
    ys = np.asarray(ys, dtype=np.float64) / cell
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    # quintic smoothstep 6t^5 - 15t^4 + 10t^3
    sx = fx**3 * (fx * (6.0 * fx - 15.0) + 10.0)
    sy = fy**3 * (fy * (6.0 * fy - 15.0) + 10.0)
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)
    v00 = _hash_lattice(x0i, y0i, seed)
    v10 = _hash_lattice(x0i + 1, y0i, seed)
    v01 = _hash_lattice(x0i, y0i + 1, seed)
    v11 = _hash_lattice(x0i + 1, y0i + 1, seed)
    top = v00 * (1 - sx) + v10 * sx
    bot = v01 * (1 - sx) + v11 * sx
    return top * (1 - sy) + bot * sy


def texture_image(width: int, height: int, cell: float, seed: int) -> ScalarImage:
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    return ScalarImage(value_noise_at(xs, ys, cell, seed))


def _weld(vertices: np.ndarray, faces: np.ndarray) -> TriangleMesh:
    """Merge coincident vertices (12-decimal rounding) and reindex faces."""
    key = np.round(vertices, 12)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    remapped = inverse[faces]
    return TriangleMesh(uniq, remapped)


def make_cube(resolution: int = 1) -> tuple[TriangleMesh, np.ndarray]:
    """Unit cube with each face an r x r triangle grid.

    Returns (mesh, crease edge indices); the creases are the sub-edges of the
    12 geometric cube edges, detected by the 30-degree dihedral threshold.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    r = resolution
    lin = np.arange(r + 1, dtype=np.float64) / r
    uu, vv = np.meshgrid(lin, lin)
    u = uu.ravel()
    v = vv.ravel()
    zero = np.zeros_like(u)
    one = np.ones_like(u)
    grids = [
        np.stack([u, v, zero], axis=1),  # z = 0
        np.stack([u, v, one], axis=1),   # z = 1
        np.stack([u, zero, v], axis=1),  # y = 0
        np.stack([u, one, v], axis=1),   # y = 1
        np.stack([zero, u, v], axis=1),  # x = 0
        np.stack([one, u, v], axis=1),   # x = 1
    ]
    flip = [True, False, False, True, True, False]  # outward orientation
    verts = []
    faces = []
    offset = 0
    for grid, fl in zip(grids, flip):
        verts.append(grid)
        idx = np.arange((r + 1) * (r + 1)).reshape(r + 1, r + 1) + offset
        a = idx[:-1, :-1].ravel()
        b = idx[:-1, 1:].ravel()
        c = idx[1:, :-1].ravel()
        d = idx[1:, 1:].ravel()
        if fl:
            tri = np.concatenate(
                [np.stack([a, d, b], axis=1), np.stack([a, c, d], axis=1)]
            )
        else:
            tri = np.concatenate(
                [np.stack([a, b, d], axis=1), np.stack([a, d, c], axis=1)]
            )
        faces.append(tri)
        offset += (r + 1) * (r + 1)
    mesh = _weld(np.concatenate(verts), np.concatenate(faces))
    creases = crease_edges_by_threshold(mesh, 30.0)
    return mesh, creases


def make_prism(resolution: int = 1, sides: int = 6) -> tuple[TriangleMesh, np.ndarray]:
    """Closed regular prism (radius 0.5, height 1) with subdivided walls and
    fan-with-rings caps: flat regions bounded by sharp rim creases."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    r = resolution
    ang = 2.0 * np.pi * np.arange(sides * r) / (sides * r)
    # polygon boundary: interpolate between the true corner vertices
    corner_idx = np.arange(sides + 1) * r
    corners = np.stack(
        [0.5 * np.cos(2 * np.pi * np.arange(sides + 1) / sides),
         0.5 * np.sin(2 * np.pi * np.arange(sides + 1) / sides)], axis=1
    )
    boundary = np.empty((sides * r, 2))
    for s in range(sides):
        ts = np.arange(r, dtype=np.float64)[:, None] / r
        boundary[s * r:(s + 1) * r] = corners[s] * (1 - ts) + corners[s + 1] * ts
    verts = []
    faces = []

    # walls: (r+1) height rows x (sides*r) columns, wrapped
    heights = np.arange(r + 1, dtype=np.float64) / r
    nb = len(boundary)
    wall = np.empty(((r + 1) * nb, 3))
    for j, h in enumerate(heights):
        wall[j * nb:(j + 1) * nb, :2] = boundary
        wall[j * nb:(j + 1) * nb, 2] = h
    verts.append(wall)
    for j in range(r):
        row0 = j * nb
        row1 = (j + 1) * nb
        for i in range(nb):
            k = (i + 1) % nb
            faces.append([row0 + i, row0 + k, row1 + k])
            faces.append([row0 + i, row1 + k, row1 + i])
    offset = len(wall)

    # caps: concentric rings shrinking to a center vertex
    for z, orient in ((0.0, False), (1.0, True)):
        ring_ids = []
        for ring in range(r, 0, -1):
            scale = ring / r
            ring_pts = np.column_stack(
                [boundary * scale, np.full(nb, z)]
            )
            verts.append(ring_pts)
            ring_ids.append(offset)
            offset += nb
        verts.append(np.array([[0.0, 0.0, z]]))
        center = offset
        offset += 1
        for a, b in zip(ring_ids[:-1], ring_ids[1:]):
            for i in range(nb):
                k = (i + 1) % nb
                quad = [a + i, a + k, b + k, b + i]
                if orient:
                    faces.append([quad[0], quad[1], quad[2]])
                    faces.append([quad[0], quad[2], quad[3]])
                else:
                    faces.append([quad[0], quad[2], quad[1]])
                    faces.append([quad[0], quad[3], quad[2]])
        inner = ring_ids[-1]
        for i in range(nb):
            k = (i + 1) % nb
            if orient:
                faces.append([inner + i, inner + k, center])
            else:
                faces.append([inner + i, center, inner + k])

    mesh = _weld(np.concatenate(verts), np.asarray(faces, dtype=np.int64))
    creases = crease_edges_by_threshold(mesh, 30.0)
    return mesh, creases


def make_sphere(resolution: int = 8) -> tuple[TriangleMesh, np.ndarray]:
    """UV sphere of radius 0.5.

    Smooth at the default resolution, so the crease set is empty; very
    coarse tessellations can trip the dihedral threshold near the poles.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    n_lat = resolution + 1
    n_lon = 2 * resolution
    verts = [[0.0, 0.0, 0.5]]
    for i in range(1, n_lat):
        phi = np.pi * i / n_lat
        for j in range(n_lon):
            lam = 2 * np.pi * j / n_lon
            verts.append(
                [0.5 * np.sin(phi) * np.cos(lam),
                 0.5 * np.sin(phi) * np.sin(lam),
                 0.5 * np.cos(phi)]
            )
    verts.append([0.0, 0.0, -0.5])
    south = len(verts) - 1
    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)
    for j in range(n_lon):
        faces.append([0, ring(1, j), ring(1, j + 1)])
        faces.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, d, b])
            faces.append([a, c, d])
    mesh = TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))
    return mesh, crease_edges_by_threshold(mesh, 30.0)


@dataclass(frozen=True)
class StereoBundle:
    """Reference/auxiliary image pair with ground-truth depth and cameras."""

    reference: ScalarImage
    auxiliary: ScalarImage
    depth_true: DepthMap
    cameras: CameraPair


def _default_cams(width: int, height: int, baseline: float) -> CameraPair:
    K = CameraIntrinsics(
        fx=float(width), fy=float(width),
        cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
    )
    return CameraPair(
        reference=K, auxiliary=K, rotation=np.eye(3),
        translation=np.array([-baseline, 0.0, 0.0]),
    )


def make_plane_stereo(
    size: int = 64,
    depth: float = 4.0,
    disparity: float = 4.0,
    seed: int = 0,
    texture_cells: float = 16.0,
    texture_shift: float = 0.0,
) -> StereoBundle:
    """Fronto-parallel textured plane with a pure horizontal baseline.

    The baseline is chosen so the uniform disparity fx * b / depth equals the
    requested value. Both views sample the same analytic planar texture, so
    the pair is consistent to interpolation-free accuracy. texture_shift
    slides the world texture horizontally (world units); a shift of
    k * depth / fx translates both images by exactly k pixels.
    """
    cams = _default_cams(size, size, baseline=disparity * depth / float(size))
    ref = cams.reference
    px, py = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    cell = depth * size / ref.fx / texture_cells
    tex_seed = derive_seed(seed, 0)
    xw = depth * (px - ref.cx) / ref.fx - texture_shift
    yw = depth * (py - ref.cy) / ref.fy
    ref_img = ScalarImage(value_noise_at(xw, yw, cell, tex_seed))
    # auxiliary pixel q sees plane point x_w = depth*(qx-cx)/fx - t_x
    t = cams.translation
    aux_img = ScalarImage(value_noise_at(xw - t[0], yw, cell, tex_seed))
    depth_map = DepthMap(np.full((size, size), depth))
    return StereoBundle(ref_img, aux_img, depth_map, cams)


def make_step_stereo(
    size: int = 64,
    depth_near: float = 4.0,
    depth_far: float = 5.0,
    disparity: float = 4.0,
    seed: int = 0,
    texture_cells: float = 16.0,
) -> StereoBundle:
    """Two fronto-parallel planes split at the principal column (a depth step).

    The near plane fills x_world < 0, the far plane x_world >= 0, and the
    vertical riser connecting them at x = 0 carries its own texture. Each
    view is synthesized by exact ray casting with nearest-hit selection, so
    occlusions behave like a real scene.
    """
    cams = _default_cams(size, size, baseline=disparity * depth_near / float(size))
    ref = cams.reference
    cell = depth_near * size / ref.fx / texture_cells
    tex_seed = derive_seed(seed, 0)
    riser_seed = derive_seed(seed, 1)

    def render(center_x: float) -> np.ndarray:
        px, py = np.meshgrid(np.arange(size, dtype=np.float64),
                             np.arange(size, dtype=np.float64))
        dx = (px - ref.cx) / ref.fx
        dy = (py - ref.cy) / ref.fy
        img = np.zeros((size, size))
        depth_hit = np.full((size, size), np.inf)
        # near and far plane candidates
        for d, lo, hi in ((depth_near, -np.inf, 0.0), (depth_far, 0.0, np.inf)):
            xw = center_x + d * dx
            yw = d * dy
            ok = (xw >= lo) & (xw < hi) & (d < depth_hit)
            img = np.where(ok, value_noise_at(xw, yw, cell, tex_seed), img)
            depth_hit = np.where(ok, d, depth_hit)
        # riser: plane x_world = 0 between the two depths
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dx != 0, -center_x / dx, np.inf)
        zr = s
        ok = (
            np.isfinite(zr) & (zr >= depth_near) & (zr <= depth_far) & (zr < depth_hit)
        )
        yr = zr * dy
        img = np.where(ok, value_noise_at(yr, zr, cell, riser_seed), img)
        depth_hit = np.where(ok, zr, depth_hit)
        return img, depth_hit

    ref_img, ref_depth = render(0.0)
    aux_img, _ = render(-cams.translation[0])
    depth_map = DepthMap(np.where(np.isfinite(ref_depth), ref_depth, depth_far))
    return StereoBundle(
        ScalarImage(ref_img), ScalarImage(aux_img), depth_map, cams
    )
