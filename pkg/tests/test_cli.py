import logging
import math

import numpy as np
import pytest
from click.testing import CliRunner

from core.types import ConfidenceMap, Polyline
from drr.volume import CtVolume
from events import FitEvent, FitEventType
from fitting.pdm import as_points
from main import cli, handle_fit_event
from storage import formats
from storage.repo import FixtureRepo, RunManifest
from synth.shapes import generate_shape_family


@pytest.fixture
def run(tmp_path):
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(cli, ["--config", str(tmp_path / "none.toml"), "--threads", "2", *map(str, args)])

    return invoke


@pytest.fixture
def water_cube(tmp_path):
    path = tmp_path / "cube.ctvol"
    formats.write_ctvol(path, CtVolume(np.zeros((10, 10, 10))))
    return path


@pytest.fixture
def circle_fixture(run, tmp_path):
    out = tmp_path / "fx" / "c0.cmap"
    out.parent.mkdir()
    result = run("synth", "--circle", "64,64,30", "--size", "128x128", "--noise", "0.02", "--seed", "4", "--out", out)
    assert result.exit_code == 0, result.output
    return out


# -------------------------
# render
# -------------------------
def test_render_requires_a_volume(run, tmp_path):
    result = run("render", "--preset", "ap-1000mm", "--out", tmp_path / "x.pgm")
    assert result.exit_code == 2
    assert "--volume" in result.output


def test_render_requires_a_camera(run, water_cube, tmp_path):
    result = run("render", "--volume", water_cube, "--out", tmp_path / "x.pgm")
    assert result.exit_code == 2


def test_render_saturates_and_repeats_bit_for_bit(run, water_cube, tmp_path):
    out = tmp_path / "cube.pgm"
    args = ("render", "--volume", water_cube, "--preset", "ap-1000mm", "--size", "32x32", "--pitch", "1.0", "--out", out)

    assert run(*args).exit_code == 0
    first = out.read_bytes()
    first_manifest = (tmp_path / "cube.pgm.manifest.json").read_bytes()
    assert run(*args).exit_code == 0

    assert out.read_bytes() == first
    assert (tmp_path / "cube.pgm.manifest.json").read_bytes() == first_manifest
    image = formats.read_pgm(out)
    assert np.count_nonzero(image == 255) >= math.ceil(0.025 * 32 * 32)


def test_render_missing_file_is_an_io_error(run, tmp_path):
    result = run("render", "--volume", tmp_path / "nope.ctvol", "--preset", "ap-1000mm", "--out", tmp_path / "x.pgm")
    assert result.exit_code == 1


def test_render_reports_progress_through_the_event_bus(run, water_cube, tmp_path):
    result = run("--log-level", "INFO", "render", "--volume", water_cube, "--preset", "ap-1000mm",
                 "--size", "16x16", "--pitch", "1.0", "--out", tmp_path / "x.pgm")
    assert result.exit_code == 0, result.output
    assert "deepmorph.progress: render: rows 0-15 done" in result.stderr


def test_progress_handler_levels(caplog):
    caplog.set_level(logging.DEBUG, logger="deepmorph.progress")
    handle_fit_event(FitEvent(FitEventType.CPD_RESTART, 3, 12.5, restart=3))
    handle_fit_event(FitEvent(FitEventType.GN_ITERATION, 0, 0.25))
    handle_fit_event(FitEvent(FitEventType.CPD_ITERATION, 7, 1.0))
    assert [(r.levelname, r.getMessage()) for r in caplog.records] == [
        ("INFO", "pose restart 3: objective 12.5"),
        ("DEBUG", "circle iteration 0: cost 0.25"),
    ]


# -------------------------
# project-gt
# -------------------------
def test_project_sphere(run, tmp_path, sphere_mesh):
    mesh = tmp_path / "sphere.obj"
    formats.write_obj(mesh, sphere_mesh)
    prefix = tmp_path / "sphere"
    result = run("project-gt", "--mesh", mesh, "--preset", "ap-1000mm", "--size", "101x101", "--pitch", "1",
                 "--out-prefix", prefix)
    assert result.exit_code == 0, result.output

    outline = formats.read_polyline(f"{prefix}.outline")
    assert outline.closed
    radius = 1000.0 * 10.0 / math.sqrt(500.0 ** 2 - 10.0 ** 2)
    r = np.hypot(outline.vertices[:, 0] - 50.0, outline.vertices[:, 1] - 50.0)
    assert np.all(np.abs(r - radius) < 2.0)
    assert set(np.unique(formats.read_pgm(f"{prefix}_mask.pgm"))) == {0, 255}


def test_project_cube_outline_parses(run, tmp_path, cube_mesh):
    mesh = tmp_path / "cube.obj"
    formats.write_obj(mesh, cube_mesh)
    prefix = tmp_path / "cube"
    assert run("project-gt", "--mesh", mesh, "--preset", "ap-1000mm", "--size", "101x101", "--pitch", "1",
               "--out-prefix", prefix).exit_code == 0
    assert isinstance(formats.read_polyline(f"{prefix}.outline"), Polyline)


def test_project_mesh_behind_the_source(run, tmp_path):
    mesh = tmp_path / "tri.obj"
    mesh.write_text("v 0 -600 0\nv 1 -600 0\nv 0 -600 1\nf 1 2 3\n")
    result = run("project-gt", "--mesh", mesh, "--focal", "0,-500,0", "--detector-center", "0,500,0",
                 "--detector-u", "1,0,0", "--detector-v", "0,0,-1", "--pitch", "1", "--size", "101x101",
                 "--out-prefix", tmp_path / "tri")
    assert result.exit_code == 1
    assert "EmptyProjection" in result.stderr


# -------------------------
# synth / fit-circle
# -------------------------
def test_synth_is_reproducible(run, circle_fixture):
    first = circle_fixture.read_bytes()
    assert run("synth", "--circle", "64,64,30", "--size", "128x128", "--noise", "0.02", "--seed", "4",
               "--out", circle_fixture).exit_code == 0
    assert circle_fixture.read_bytes() == first
    assert formats.read_circle_record(circle_fixture.with_suffix(".circle")).circle.r == 30.0


def test_synth_full_image_occlusion(run, tmp_path):
    out = tmp_path / "z.cmap"
    result = run("synth", "--circle", "16,16,8", "--size", "32x32", "--occlusions", "1",
                 "--occlusion-side", "32,32", "--out", out)
    assert result.exit_code == 0, result.output
    assert not formats.read_cmap(out).values.any()
    assert formats.read_squares(tmp_path / "z.occl")[0].side == 32


def test_synth_rerun_replaces_the_fixture(run, tmp_path):
    out = tmp_path / "fx" / "a.cmap"
    out.parent.mkdir()
    assert run("synth", "--circle", "32,32,12", "--size", "64x64", "--occlusions", "2",
               "--occlusion-side", "5,8", "--out", out).exit_code == 0
    assert [f.stratum for f in FixtureRepo(out.parent).circle_fixtures()] == ["occluded"]

    assert run("synth", "--circle", "32,32,12", "--size", "64x64", "--out", out).exit_code == 0
    assert [f.stratum for f in FixtureRepo(out.parent).circle_fixtures()] == ["clean"]
    manifest = RunManifest.load(tmp_path / "fx" / "a.manifest.json")
    assert manifest.outputs == sorted([str(out), str(out.with_suffix(".circle"))])

    outline = tmp_path / "o.outline"
    formats.write_polyline(outline, Polyline(np.array([[10.0, 10.0], [50.0, 10.0], [30.0, 50.0]]), closed=True))
    assert run("synth", "--outline", outline, "--size", "64x64", "--out", out).exit_code == 0
    assert sorted(p.name for p in out.parent.iterdir()) == ["a.cmap", "a.manifest.json", "a.outline"]


def test_synth_needs_exactly_one_truth(run, tmp_path):
    assert run("synth", "--out", tmp_path / "a.cmap").exit_code == 2


def test_fit_circle_against_truth(run, circle_fixture, tmp_path):
    prefix = tmp_path / "fit"
    truth = circle_fixture.with_suffix(".circle")
    result = run("fit-circle", "--confmap", circle_fixture, "--truth", truth, "--out-prefix", prefix)
    assert result.exit_code == 0, result.output

    rmse_line = [ln for ln in result.stdout.splitlines() if ln.startswith("circle_param_rmse")][0]
    assert float(rmse_line.split()[1]) < 0.5
    assert formats.read_circle_record(f"{prefix}.circle").method == "algebraic"
    manifest = RunManifest.load(f"{prefix}.manifest.json")
    assert manifest.command == "fit-circle" and manifest.verify()


def test_fit_circle_overlay_differs_only_on_the_outline(run, circle_fixture, tmp_path):
    prefix = tmp_path / "fit"
    assert run("fit-circle", "--confmap", circle_fixture, "--out-prefix", prefix).exit_code == 0
    base = formats.confmap_to_gray(formats.read_cmap(circle_fixture))
    overlay = formats.read_pgm(f"{prefix}_overlay.pgm")
    changed = overlay != base
    assert changed.any() and np.all(overlay[changed] == 255)


def test_geometric_cost_not_above_algebraic(run, circle_fixture, tmp_path):
    costs = {}
    for method in ("algebraic", "geometric"):
        result = run("fit-circle", "--confmap", circle_fixture, "--method", method, "--out-prefix", tmp_path / method)
        assert result.exit_code == 0
        costs[method] = float(result.stdout.split()[3])
    assert costs["geometric"] <= costs["algebraic"]


def test_fit_circle_gate(run, tmp_path):
    values = np.zeros((20, 20))
    values.flat[:99] = 1.0
    path = tmp_path / "few.cmap"
    formats.write_cmap(path, ConfidenceMap(values))
    result = run("fit-circle", "--confmap", path, "--out-prefix", tmp_path / "few")
    assert result.exit_code == 3
    assert "TooFewForeground" in result.stderr
    assert not (tmp_path / "few.circle").exists()


def test_fit_circle_rejects_corrupt_map(run, tmp_path):
    path = tmp_path / "bad.cmap"
    path.write_bytes(b"CMAP 1 4 4\n")
    assert run("fit-circle", "--confmap", path, "--out-prefix", tmp_path / "bad").exit_code == 1


# -------------------------
# build-pdm / fit-shape
# -------------------------
def _write_shapes(folder, shapes):
    folder.mkdir()
    for i, s in enumerate(shapes):
        formats.write_points(folder / f"s{i:03d}.pts", as_points(s), closed=True)
    return str(folder / "*.pts")


def test_build_pdm_single_mode_family(run, tmp_path, egg):
    pattern = _write_shapes(tmp_path / "train", generate_shape_family(egg, 40, 1, [2.0], seed=5))
    out = tmp_path / "m.pdm"
    result = run("build-pdm", "--shapes", pattern, "--out", out)
    assert result.exit_code == 0, result.output
    assert "M=1" in result.stdout
    model = formats.read_pdm(out)
    np.testing.assert_allclose(model.modes @ model.modes.T, np.eye(model.n_modes), atol=1e-9)


def test_build_pdm_full_variance_keeps_rank(run, tmp_path, egg, rng):
    pattern = _write_shapes(tmp_path / "train", [egg + rng.normal(0, 2.0, egg.size) for _ in range(5)])
    result = run("build-pdm", "--shapes", pattern, "--variance", "1.0", "--out", tmp_path / "m.pdm")
    assert result.exit_code == 0, result.output
    assert formats.read_pdm(tmp_path / "m.pdm").n_modes == 4


def test_build_pdm_point_count_mismatch(run, tmp_path, egg):
    pattern = _write_shapes(tmp_path / "train", [egg, egg[:-2]])
    result = run("build-pdm", "--shapes", pattern, "--out", tmp_path / "m.pdm")
    assert result.exit_code == 1
    assert "ShapeMismatch" in result.stderr


@pytest.fixture
def shape_case(tmp_path, shape_model, image_pose, make_instance):
    model = tmp_path / "model.pdm"
    formats.write_pdm(model, shape_model)
    truth = tmp_path / "truth.outline"
    b = np.array([1.5, -1.0]) * np.sqrt(shape_model.eigenvalues)
    formats.write_polyline(truth, Polyline(make_instance(shape_model, image_pose, b), closed=True))
    return model, truth


def test_fit_shape_end_to_end(run, tmp_path, shape_case):
    model, truth = shape_case
    cmap = tmp_path / "s.cmap"
    assert run("synth", "--outline", truth, "--size", "128x128", "--noise", "0", "--out", cmap).exit_code == 0

    prefix = tmp_path / "fit"
    args = ("fit-shape", "--model", model, "--confmap", cmap, "--truth-outline", truth, "--out-prefix", prefix)
    result = run(*args)
    assert result.exit_code == 0, result.output
    rmse = float(result.stdout.splitlines()[-1].split()[1])
    assert rmse < 1.0

    landmarks = (tmp_path / "fit.landmarks").read_text()
    assert len(formats.read_point_set(tmp_path / "fit.landmarks")) == 32
    assert run(*args).exit_code == 0
    assert (tmp_path / "fit.landmarks").read_text() == landmarks
    converged, iterations, _ = formats.read_fit_summary(tmp_path / "fit.summary")
    assert 1 <= iterations <= 10


def test_fit_shape_on_empty_map(run, tmp_path, shape_case):
    model, _ = shape_case
    cmap = tmp_path / "zero.cmap"
    formats.write_cmap(cmap, ConfidenceMap(np.zeros((64, 64))))
    result = run("fit-shape", "--model", model, "--confmap", cmap, "--out-prefix", tmp_path / "fit")
    assert result.exit_code == 3
    assert "InsufficientForeground" in result.stderr


# -------------------------
# eval
# -------------------------
def test_eval_circles_end_to_end(run, circle_fixture, tmp_path):
    result = run("eval-circles", "--fixtures", circle_fixture.parent, "--out-prefix", tmp_path / "ev")
    assert result.exit_code == 0, result.output
    assert "clean geometric circle_rmse" in result.stdout
    assert (tmp_path / "ev_records.txt").exists()


def test_eval_circles_on_empty_directory(run, tmp_path):
    (tmp_path / "empty").mkdir()
    result = run("eval-circles", "--fixtures", tmp_path / "empty", "--out-prefix", tmp_path / "ev")
    assert result.exit_code == 1


def test_eval_shapes_end_to_end(run, tmp_path, shape_case):
    model, truth = shape_case
    fixtures = tmp_path / "shapes"
    fixtures.mkdir()
    assert run("synth", "--outline", truth, "--size", "128x128", "--noise", "0",
               "--out", fixtures / "s0.cmap").exit_code == 0
    result = run("eval-shapes", "--fixtures", fixtures, "--model", model, "--rotations", "4", "--no-reflection",
                 "--out-prefix", tmp_path / "ev")
    assert result.exit_code == 0, result.output
    assert "clean morph point_to_curve_rmse" in result.stdout


# -------------------------
# config
# -------------------------
def test_bad_config_file_exits_with_data_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[render]\nn_samples = 0\n")
    result = CliRunner().invoke(cli, ["--config", str(bad), "synth", "--circle", "1,1,1", "--out", str(tmp_path / "a.cmap")])
    assert result.exit_code == 1
