import json

import numpy as np
import pytest

from lpstereo import fileio
from lpstereo.cli import run, worker_count
from lpstereo.synth import make_plane_stereo


def read_report(path):
    return json.loads(path.read_text())


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("DCV_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("DCV_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("DCV_THREADS", "0")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.setenv("DCV_THREADS", "lots")
    with pytest.raises(ValueError):
        worker_count()


def test_synth_cube_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        code = run(["synth", "--kind", "cube", "--resolution", "3",
                    "--noise", "0.01", "--seed", "7", "--out-dir", str(out)])
        assert code == 0
    assert (a / "cube.obj").read_bytes() == (b / "cube.obj").read_bytes()
    assert (a / "cube_noisy.obj").read_bytes() == (b / "cube_noisy.obj").read_bytes()
    creases = json.loads((a / "cube.creases.json").read_text())
    assert len(creases["crease_edges"]) == 36


def test_synth_stereo_bundle(tmp_path):
    out = tmp_path / "scene"
    code = run(["synth", "--kind", "plane-stereo", "--resolution", "32",
                "--seed", "3", "--out-dir", str(out)])
    assert code == 0
    for name in ("ref.pgm", "aux.pgm", "depth_true.f32", "cams.json"):
        assert (out / name).exists()
    depth = fileio.read_depth(out / "depth_true.f32")
    assert depth.depth.shape == (32, 32)


def test_denoise_pipeline(tmp_path, capsys):
    scene = tmp_path / "s"
    run(["synth", "--kind", "cube", "--resolution", "6", "--noise", "0.01",
         "--seed", "5", "--out-dir", str(scene)])
    report = tmp_path / "r.json"
    code = run([
        "denoise", "--in", str(scene / "cube_noisy.obj"),
        "--out", str(tmp_path / "clean.obj"), "--report", str(report),
        "--reference", str(scene / "cube.obj"),
        "--creases", str(scene / "cube.creases.json"),
    ])
    assert code == 0
    lines = [json.loads(ln) for ln in capsys.readouterr().out.splitlines()]
    sweeps = [ln for ln in lines if "objective" in ln]
    assert sweeps and all(
        set(ln) >= {"outer", "beta", "objective", "sigma", "theta", "p", "rmse_vs_input"}
        for ln in sweeps
    )
    doc = read_report(report)
    m = doc["metrics"]
    assert {"p", "theta", "sigma", "lambda", "vertex_rmse"} <= set(m)
    assert doc["config"]["outer"] == 3  # effective defaults recorded
    noisy = fileio.read_obj(scene / "cube_noisy.obj")
    clean = fileio.read_obj(tmp_path / "clean.obj")
    assert np.array_equal(noisy.faces, clean.faces)


def test_denoise_deterministic_rerun(tmp_path):
    scene = tmp_path / "s"
    run(["synth", "--kind", "cube", "--resolution", "5", "--noise", "0.008",
         "--seed", "2", "--out-dir", str(scene)])
    outs = []
    for name in ("c1.obj", "c2.obj"):
        run(["denoise", "--in", str(scene / "cube_noisy.obj"),
             "--out", str(tmp_path / name)])
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_fit_prior_report(tmp_path):
    scene = tmp_path / "s"
    run(["synth", "--kind", "cube", "--resolution", "5", "--noise", "0.01",
         "--seed", "9", "--out-dir", str(scene)])
    report = tmp_path / "fit.json"
    code = run(["fit-prior", "--in", str(scene / "cube_noisy.obj"),
                "--reference", str(scene / "cube.obj"), "--report", str(report)])
    assert code == 0
    doc = read_report(report)
    m = doc["metrics"]
    assert set(m) >= {"p", "theta", "sigma", "lambda", "objective", "grid"}
    assert len(m["grid"]) == 96
    assert m["sigma"] > 0
    assert np.isclose(m["lambda"], m["theta"] * m["sigma"] ** 2 / 2)


def test_gst_check_command(tmp_path, monkeypatch):
    monkeypatch.setenv("DCV_THREADS", "3")
    report = tmp_path / "gst.json"
    code = run(["gst-check", "--cases", "200", "--seed", "1",
                "--report", str(report)])
    assert code == 0
    doc = read_report(report)
    assert doc["metrics"]["max_abs_error"] <= 1e-4
    assert doc["dcv_threads"] == 3  # report records the effective cap


def test_zncc_grad_command(tmp_path):
    scene = tmp_path / "s"
    run(["synth", "--kind", "plane-stereo", "--resolution", "32", "--seed", "4",
         "--out-dir", str(scene)])
    report = tmp_path / "z.json"
    dump = tmp_path / "d2m.f64"
    code = run(["zncc-grad", "--ref", str(scene / "ref.pgm"),
                "--aux", str(scene / "aux.pgm"), "--out", str(dump),
                "--report", str(report)])
    assert code == 0
    doc = read_report(report)
    assert doc["metrics"]["fd_max_rel_error"] <= 1e-3
    field = fileio.read_float_dump(dump)
    assert field.shape == (32, 32)


def test_guided_filter_command(tmp_path):
    scene = tmp_path / "s"
    run(["synth", "--kind", "plane-stereo", "--resolution", "24", "--seed", "8",
         "--out-dir", str(scene)])
    out = tmp_path / "filtered.pgm"
    code = run(["guided-filter", "--in", str(scene / "ref.pgm"),
                "--guide", str(scene / "aux.pgm"), "--out", str(out),
                "--report", str(tmp_path / "g.json")])
    assert code == 0
    assert fileio.read_pgm(out).data.shape == (24, 24)


def test_bridge_check_command(tmp_path):
    report = tmp_path / "b.json"
    code = run(["bridge-check", "--size", "24", "--seed", "2",
                "--report", str(report)])
    assert code == 0
    doc = read_report(report)
    assert doc["metrics"]["exact_identity_residual"] <= 1e-10


def test_evolve_pipeline(tmp_path, capsys):
    scene = tmp_path / "s"
    run(["synth", "--kind", "plane-stereo", "--resolution", "32", "--seed", "6",
         "--out-dir", str(scene)])
    truth = fileio.read_depth(scene / "depth_true.f32")
    from lpstereo.evolve import DepthMap

    fileio.write_depth(scene / "init.f32", DepthMap(truth.depth * 1.05))
    report = tmp_path / "e.json"
    code = run([
        "evolve", "--ref", str(scene / "ref.pgm"), "--aux", str(scene / "aux.pgm"),
        "--depth", str(scene / "init.f32"), "--cams", str(scene / "cams.json"),
        "--out", str(tmp_path / "refined.f32"), "--levels", "1", "--iters", "30",
        "--regularizer", "isotropic", "--depth-true", str(scene / "depth_true.f32"),
        "--report", str(report),
    ])
    assert code == 0
    lines = [json.loads(ln) for ln in capsys.readouterr().out.splitlines()]
    iters = [ln for ln in lines if "energy" in ln]
    assert len(iters) == 30
    doc = read_report(report)
    init_rmse = float(np.sqrt(np.mean((truth.depth * 1.05 - truth.depth) ** 2)))
    assert doc["metrics"]["depth_rmse"] < init_rmse


def test_evolve_accepts_repeated_aux_views(tmp_path):
    scene = tmp_path / "s"
    run(["synth", "--kind", "plane-stereo", "--resolution", "32", "--seed", "6",
         "--out-dir", str(scene)])
    truth = fileio.read_depth(scene / "depth_true.f32")
    from lpstereo.evolve import DepthMap

    fileio.write_depth(scene / "init.f32", DepthMap(truth.depth * 1.05))
    code = run([
        "evolve", "--ref", str(scene / "ref.pgm"),
        "--aux", str(scene / "aux.pgm"), "--cams", str(scene / "cams.json"),
        "--aux", str(scene / "aux.pgm"), "--cams", str(scene / "cams.json"),
        "--depth", str(scene / "init.f32"),
        "--out", str(tmp_path / "refined.f32"), "--levels", "1", "--iters", "10",
        "--regularizer", "isotropic",
    ])
    assert code == 0
    assert fileio.read_depth(tmp_path / "refined.f32").depth.shape == (32, 32)


def test_missing_input_exits_2(tmp_path, capsys):
    code = run(["denoise", "--in", str(tmp_path / "nope.obj"),
                "--out", str(tmp_path / "out.obj")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err["error"] == "input"


def test_numeric_failure_exits_3(tmp_path, capsys):
    # coincident vertices: gradients are identically zero -> fit cannot run
    path = tmp_path / "flat.obj"
    path.write_text("v 0 0 0\nv 0 0 0\nv 0 0 0\nf 1 2 3\n")
    code = run(["fit-prior", "--in", str(path),
                "--report", str(tmp_path / "r.json")])
    assert code == 3
    err = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err["error"] == "numeric"


def test_bad_arguments_exit_2(capsys):
    assert run(["synth", "--kind", "hypercube", "--out-dir", "x"]) == 2


def test_report_embeds_full_config(tmp_path):
    report = tmp_path / "r.json"
    run(["gst-check", "--cases", "50", "--report", str(report)])
    doc = read_report(report)
    assert doc["config"]["seed"] == 1  # default surfaced, not hidden
    assert doc["config"]["cases"] == 50
