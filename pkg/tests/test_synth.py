import numpy as np
import pytest

from lpstereo.evolve import predict_image
from lpstereo.synth import (
    derive_seed,
    make_cube,
    make_plane_stereo,
    make_prism,
    make_sphere,
    make_step_stereo,
    splitmix64,
    value_noise_at,
)


def test_splitmix64_reference_vector():
    # first two outputs from state 0 (published splitmix64 sequence)
    s, v1 = splitmix64(0)
    s, v2 = splitmix64(s)
    assert v1 == 0xE220A8397B1DCDAF
    assert v2 == 0x6E789E6AA1B965F4


def test_derive_seed_streams_differ():
    seeds = [derive_seed(99, k) for k in range(6)]
    assert len(set(seeds)) == 6
    assert derive_seed(99, 3) == derive_seed(99, 3)


def test_value_noise_properties():
    xs = np.linspace(-5, 5, 2001)
    ys = np.full_like(xs, 0.37)
    vals = value_noise_at(xs, ys, 1.0, seed=3)
    assert np.all((vals >= 0) & (vals <= 1))
    # C^2 quintic blend: steps on a fine sampling stay tiny
    assert np.abs(np.diff(vals)).max() < 0.01
    again = value_noise_at(xs, ys, 1.0, seed=3)
    assert np.array_equal(vals, again)
    other = value_noise_at(xs, ys, 1.0, seed=4)
    assert not np.array_equal(vals, other)


def test_cube_resolution_one_counts():
    mesh, creases = make_cube(1)
    assert (mesh.n_vertices, mesh.n_faces, mesh.n_edges) == (8, 12, 18)
    assert len(creases) == 12


def test_cube_is_closed():
    mesh, _ = make_cube(4)
    assert np.all(mesh.edge_face_count == 2)
    assert mesh.n_vertices - mesh.n_edges + mesh.n_faces == 2


def test_prism_is_closed_with_creases():
    mesh, creases = make_prism(2)
    assert np.all(mesh.edge_face_count == 2)
    assert mesh.n_vertices - mesh.n_edges + mesh.n_faces == 2
    assert len(creases) > 0


def test_sphere_smooth_no_creases():
    mesh, creases = make_sphere(8)
    assert mesh.n_vertices - mesh.n_edges + mesh.n_faces == 2
    assert len(creases) == 0
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.allclose(r, 0.5, atol=1e-12)


def test_plane_stereo_zero_baseline_identical_views():
    bundle = make_plane_stereo(size=24, depth=4.0, disparity=0.0, seed=2)
    assert np.array_equal(bundle.reference.data, bundle.auxiliary.data)


def test_plane_stereo_consistency():
    # the auxiliary warped through the true depth reproduces the reference
    bundle = make_plane_stereo(size=32, depth=4.0, disparity=4.0, seed=6)
    pred = predict_image(bundle.auxiliary, bundle.depth_true, bundle.cameras)
    diff = np.abs(pred.data - bundle.reference.data)[pred.valid_mask]
    assert diff.max() <= 1e-12


def test_step_stereo_structure():
    bundle = make_step_stereo(size=32, depth_near=4.0, depth_far=5.0,
                              disparity=4.0, seed=1)
    d = bundle.depth_true.depth
    cx = bundle.cameras.reference.cx
    cols = np.arange(32)
    assert np.all(d[:, cols < cx] == 4.0)
    assert np.all(d[:, cols > cx] == 5.0)
    assert not np.array_equal(bundle.reference.data, bundle.auxiliary.data)


def test_step_stereo_deterministic():
    a = make_step_stereo(size=24, seed=9)
    b = make_step_stereo(size=24, seed=9)
    assert np.array_equal(a.reference.data, b.reference.data)
    assert np.array_equal(a.auxiliary.data, b.auxiliary.data)


def test_mesh_makers_reject_bad_resolution():
    with pytest.raises(ValueError):
        make_cube(0)
    with pytest.raises(ValueError):
        make_prism(0)
    with pytest.raises(ValueError):
        make_sphere(1)
