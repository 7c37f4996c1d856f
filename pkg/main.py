"""
deepmorph command line.

Exit codes: 0 success, 1 I/O or data error, 2 usage error,
3 no detection / no registration.
"""

from __future__ import annotations

import functools
import glob
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import click
import numpy as np

import env
from config import (
    AppConfig,
    ConfigError,
    MorphConfig,
    load_config,
    parse_triple,
    with_overrides,
)
from core.errors import DeepMorphError, InsufficientForeground, RegistrationFailed
from core.metrics import circle_param_rmse, point_to_curve_rmse
from core.types import Circle, PointSet
from drr.projection import project_mesh_ground_truth
from drr.render import AP_PRESET, CameraGeometry, ap_camera, render
from evaluation.suite import evaluate_circle_suite, evaluate_shape_suite
from events import EventBus, FitEvent, FitEventType
from fitting.circle import FitMethod, detect_circle
from fitting.morph import fit_shape
from fitting.pdm import align_training_shapes, build_pdm
from storage import formats
from storage.repo import FixtureRepo, RunManifest
from synth.confmap import confmap_from_circle, confmap_from_outline, occlude_squares
from synth.shapes import circle_outline

logger = logging.getLogger("deepmorph")

EXIT_DATA = 1
EXIT_NO_RESULT = 3


@dataclass(frozen=True)
class AppState:
    config: AppConfig
    threads: int
    bus: EventBus


class NoResult(DeepMorphError):
    """A pipeline ran cleanly but found nothing (gated detection)."""
    reason = "NoDetection"


def handle_errors(fn):
    """Map domain failures onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (NoResult, InsufficientForeground, RegistrationFailed) as e:
            click.echo(f"{e.reason}: {e}", err=True)
            sys.exit(EXIT_NO_RESULT)
        except (DeepMorphError, ConfigError, OSError) as e:
            reason = getattr(e, "reason", type(e).__name__)
            click.echo(f"ERROR: {reason}: {e}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


# --- Solver progress ---
progress = logging.getLogger("deepmorph.progress")


def handle_fit_event(ev: FitEvent) -> None:
    # per-iteration solver detail is logged by the solvers themselves
    if ev.type == FitEventType.RENDER_ROW_BLOCK:
        progress.info("render: rows %d-%d done", ev.iteration, ev.iteration + int(ev.value) - 1)
    elif ev.type == FitEventType.CPD_RESTART:
        progress.info("pose restart %d: objective %.6g", ev.restart, ev.value)
    elif ev.type == FitEventType.MORPH_ITERATION:
        progress.info("shape iteration %d: mean movement %.4f px", ev.iteration, ev.value)
    elif ev.type == FitEventType.GN_ITERATION:
        progress.debug("circle iteration %d: cost %.6g", ev.iteration, ev.value)


# -------------------------
# Option parsing
# -------------------------
def _triple(ctx, param, value):
    if value is None:
        return None
    try:
        return parse_triple(value)
    except (ConfigError, ValueError) as e:
        raise click.BadParameter(str(e))


def _size(ctx, param, value):
    if value is None:
        return None
    try:
        w, h = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"expected WxH but got {value!r}")
    if w < 1 or h < 1:
        raise click.BadParameter("image size must be positive")
    return w, h


def _pair(cast):
    def parse(ctx, param, value):
        if value is None:
            return None
        parts = value.split(",")
        try:
            a, b = (cast(p) for p in parts)
        except ValueError:
            raise click.BadParameter(f"expected a,b but got {value!r}")
        return a, b
    return parse


def camera_options(fn):
    options = [
        click.option("--preset", type=click.Choice([AP_PRESET]), default=None,
                     help="Scene preset centred on the input; explicit flags are then optional."),
        click.option("--focal", callback=_triple, help="Focal point x,y,z in mm."),
        click.option("--detector-center", callback=_triple, help="Detector centre x,y,z in mm."),
        click.option("--detector-u", callback=_triple, help="Detector column axis (unit vector)."),
        click.option("--detector-v", callback=_triple, help="Detector row axis (unit vector)."),
        click.option("--pitch", type=float, default=None, help="Pixel pitch in mm."),
        click.option("--size", callback=_size, default=None, help="Image size WxH."),
        click.option("--circular-mask", is_flag=True, help="Zero pixels outside the inscribed disk."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def build_camera(center: np.ndarray, preset, focal, detector_center, detector_u, detector_v,
                 pitch, size, circular_mask) -> CameraGeometry:
    if preset == AP_PRESET:
        base = ap_camera(center, circular_mask=circular_mask)
        return CameraGeometry(
            focal or base.focal_point,
            detector_center or base.detector_center,
            detector_u or base.detector_u,
            detector_v or base.detector_v,
            pitch or base.pixel_pitch,
            size or base.image_size,
            circular_mask,
        )
    missing = [name for name, v in (("--focal", focal), ("--detector-center", detector_center),
                                    ("--detector-u", detector_u), ("--detector-v", detector_v),
                                    ("--pitch", pitch), ("--size", size)) if v is None]
    if missing:
        raise click.UsageError(f"missing camera options {', '.join(missing)} (or use --preset {AP_PRESET})")
    return CameraGeometry(focal, detector_center, detector_u, detector_v, pitch, size, circular_mask)


def _manifest(ctx: click.Context, prefix, inputs, outputs) -> None:
    path = f"{prefix}.manifest.json"
    params = {k: v for k, v in ctx.params.items()}
    RunManifest.build(ctx.command.name, params, inputs, outputs).write(path)


# -------------------------
# Commands
# -------------------------
@click.group()
@click.option("--config", "config_path", default=env.DEEPMORPH_CONFIG, show_default=True,
              help="TOML defaults file.")
@click.option("--log-level", default=env.DEEPMORPH_LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker threads (default: DEEPMORPH_THREADS).")
@click.pass_context
def cli(ctx: click.Context, config_path: str, log_level: str, threads: Optional[int]) -> None:
    """Fit circles and shape models to confidence maps; simulate radiographs."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr, force=True,
                        format="%(levelname)s: %(name)s: %(message)s")
    try:
        config = load_config(config_path)
    except ConfigError as e:
        click.echo(f"ERROR: config: {e}", err=True)
        sys.exit(EXIT_DATA)
    bus = EventBus()
    bus.subscribe(handle_fit_event)
    ctx.obj = AppState(config, threads or env.DEEPMORPH_THREADS, bus)


@cli.command("render")
@click.option("--volume", required=True, help="CTVOL v1 file.")
@camera_options
@click.option("--samples", type=click.IntRange(min=2), default=None, help="Samples per ray.")
@click.option("--mu-water", type=float, default=None, help="Water attenuation per mm.")
@click.option("--saturation", type=float, default=None, help="Fraction of pixels saturated.")
@click.option("--gray-range", callback=_pair(int), default=None, help="Gray range a,b.")
@click.option("--out", required=True, help="Output PGM.")
@click.pass_context
@handle_errors
def cmd_render(ctx, volume, preset, focal, detector_center, detector_u, detector_v, pitch, size,
               circular_mask, samples, mu_water, saturation, gray_range, out):
    """Render a radiograph from a CT volume."""
    state: AppState = ctx.obj
    vol = formats.read_ctvol(volume)
    camera = build_camera(vol.center(), preset, focal, detector_center, detector_u, detector_v,
                          pitch, size, circular_mask)
    gray_min, gray_max = gray_range or (None, None)
    cfg = with_overrides(state.config.render, n_samples=samples, mu_water=mu_water,
                         saturation_fraction=saturation, gray_min=gray_min, gray_max=gray_max)
    image = render(vol, camera, cfg, bus=state.bus, threads=state.threads)
    formats.write_pgm(out, image)
    _manifest(ctx, out, [volume], [out])
    click.echo(f"wrote {out} ({camera.width}x{camera.height})")


@cli.command("project-gt")
@click.option("--mesh", required=True, help="OBJ mesh (v/f lines).")
@camera_options
@click.option("--closing-radius", type=click.IntRange(min=0), default=3, show_default=True)
@click.option("--out-prefix", required=True, help="Writes <prefix>.outline and <prefix>_mask.pgm.")
@click.pass_context
@handle_errors
def cmd_project_gt(ctx, mesh, preset, focal, detector_center, detector_u, detector_v, pitch, size,
                   circular_mask, closing_radius, out_prefix):
    """Project a mesh to its ground-truth silhouette outline and mask."""
    m = formats.read_obj(mesh)
    lo, hi = m.vertices.min(axis=0), m.vertices.max(axis=0)
    camera = build_camera((lo + hi) / 2.0, preset, focal, detector_center, detector_u, detector_v,
                          pitch, size, circular_mask)
    outline, mask = project_mesh_ground_truth(m, camera, closing_radius)
    outline_path = f"{out_prefix}.outline"
    mask_path = f"{out_prefix}_mask.pgm"
    formats.write_polyline(outline_path, outline)
    formats.write_pgm(mask_path, formats.mask_to_gray(mask))
    _manifest(ctx, out_prefix, [mesh], [outline_path, mask_path])
    click.echo(f"outline {len(outline)} vertices, mask {int(mask.sum())} px")


@cli.command("fit-circle")
@click.option("--confmap", required=True, help="CMAP v1 file.")
@click.option("--tau", type=click.FloatRange(0.0, 1.0), default=None)
@click.option("--min-foreground", type=click.IntRange(min=3), default=None)
@click.option("--method", type=click.Choice([m.value for m in FitMethod]), default=None)
@click.option("--truth", default=None, help="Truth circle record; prints circle_param_rmse.")
@click.option("--out-prefix", required=True, help="Writes <prefix>.circle and <prefix>_overlay.pgm.")
@click.pass_context
@handle_errors
def cmd_fit_circle(ctx, confmap, tau, min_foreground, method, truth, out_prefix):
    """Detect a circle in a confidence map."""
    state: AppState = ctx.obj
    cfg = with_overrides(state.config.circle, tau=tau, min_foreground=min_foreground, method=method)
    cmap = formats.read_cmap(confmap)
    det = detect_circle(cmap, cfg.tau, cfg.min_foreground, cfg.geometric, FitMethod(cfg.method),
                       bus=state.bus)
    if not det.detected:
        raise NoResult(det.reason.value)

    record = formats.CircleRecord(det.circle, det.cost, det.n_points, det.method.value)
    record_path = f"{out_prefix}.circle"
    overlay_path = f"{out_prefix}_overlay.pgm"
    formats.write_circle_record(record_path, record)
    outline = circle_outline(det.circle, 720)
    formats.write_pgm(overlay_path, formats.draw_overlay(formats.confmap_to_gray(cmap), outline.vertices))
    inputs = [confmap] + ([truth] if truth else [])
    _manifest(ctx, out_prefix, inputs, [record_path, overlay_path])

    c = det.circle
    click.echo(f"{c.cx:.17g} {c.cy:.17g} {c.r:.17g} {det.cost:.17g} {det.n_points} {det.method.value}")
    if truth:
        click.echo(f"circle_param_rmse {circle_param_rmse(c, formats.read_circle_record(truth).circle):.17g}")


@cli.command("build-pdm")
@click.option("--shapes", "patterns", required=True, multiple=True, help="Glob of training shape files.")
@click.option("--variance", type=click.FloatRange(0.0, 1.0, min_open=True), default=None)
@click.option("--out", required=True, help="Output PDM v1 file.")
@click.pass_context
@handle_errors
def cmd_build_pdm(ctx, patterns, variance, out):
    """Align training shapes and build a point distribution model."""
    state: AppState = ctx.obj
    paths = sorted({p for pattern in patterns for p in glob.glob(pattern)})
    if not paths:
        raise FileNotFoundError(f"no shape files match {', '.join(patterns)}")
    shapes = [formats.read_shape_vector(p) for p in paths]
    aligned, _ = align_training_shapes(shapes, bus=state.bus)
    vf = variance if variance is not None else state.config.pdm.variance_fraction
    model = build_pdm(aligned, vf)
    formats.write_pdm(out, model)
    _manifest(ctx, out, paths, [out])
    click.echo(f"{len(paths)} shapes, N={model.n_points}, M={model.n_modes}")


@cli.command("fit-shape")
@click.option("--model", "model_path", required=True, help="PDM v1 file.")
@click.option("--confmap", required=True, help="CMAP v1 file.")
@click.option("--profile-length", type=float, default=None)
@click.option("--max-iter", type=click.IntRange(min=1), default=None)
@click.option("--tol", type=float, default=None)
@click.option("--rotations", type=click.IntRange(min=1), default=None)
@click.option("--reflection/--no-reflection", default=None)
@click.option("--truth-outline", default=None, help="Truth polyline; prints point_to_curve_rmse.")
@click.option("--out-prefix", required=True,
              help="Writes <prefix>.landmarks, <prefix>.summary, <prefix>.pose and <prefix>_overlay.pgm.")
@click.pass_context
@handle_errors
def cmd_fit_shape(ctx, model_path, confmap, profile_length, max_iter, tol, rotations, reflection,
                  truth_outline, out_prefix):
    """Fit a point distribution model to a confidence map."""
    state: AppState = ctx.obj
    cfg = _morph_config(state.config.morph, profile_length, max_iter, tol, rotations, reflection)
    model = formats.read_pdm(model_path)
    cmap = formats.read_cmap(confmap)
    result = fit_shape(model, cmap, cfg, bus=state.bus, threads=state.threads)

    landmarks = f"{out_prefix}.landmarks"
    summary = f"{out_prefix}.summary"
    pose = f"{out_prefix}.pose"
    overlay = f"{out_prefix}_overlay.pgm"
    formats.write_points(landmarks, result.shape.xy)
    formats.write_fit_summary(summary, result.converged, result.iterations_used, result.final_movement)
    formats.write_transform_record(pose, result.shape.pose)
    formats.write_pgm(overlay, formats.draw_overlay(formats.confmap_to_gray(cmap), result.shape.xy, cfg.closed))
    inputs = [model_path, confmap] + ([truth_outline] if truth_outline else [])
    _manifest(ctx, out_prefix, inputs, [landmarks, summary, pose, overlay])

    click.echo(f"{int(result.converged)} {result.iterations_used} {result.final_movement:.17g}")
    if truth_outline:
        rmse = point_to_curve_rmse(PointSet(result.shape.xy), formats.read_polyline(truth_outline))
        click.echo(f"point_to_curve_rmse {rmse:.17g}")


def _morph_config(base: MorphConfig, profile_length, max_iter, tol, rotations, reflection) -> MorphConfig:
    cpd = with_overrides(base.cpd, n_rotations=rotations, try_reflection=reflection)
    return with_overrides(base, profile_half_length=profile_length, max_iterations=max_iter,
                          convergence_tolerance=tol, cpd=cpd)


@cli.command("synth")
@click.option("--outline", default=None, help="Truth outline polyline file.")
@click.option("--circle", callback=_triple, default=None, help="Truth circle cx,cy,r.")
@click.option("--size", callback=_size, default="448x448", show_default=True)
@click.option("--sigma", type=float, default=None, help="Ridge sigma in pixels.")
@click.option("--peak", type=float, default=None)
@click.option("--noise", type=float, default=None, help="Background noise sigma.")
@click.option("--occlusions", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--occlusion-side", callback=_pair(int), default="15,15", show_default=True)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None)
@click.option("--out", required=True, help="Output <dir>/<id>.cmap; truth sidecars go next to it.")
@click.pass_context
@handle_errors
def cmd_synth(ctx, outline, circle, size, sigma, peak, noise, occlusions, occlusion_side, seed, out):
    """Generate a confidence-map fixture with known ground truth."""
    state: AppState = ctx.obj
    if (outline is None) == (circle is None):
        raise click.UsageError("give exactly one of --outline or --circle")
    cfg = with_overrides(state.config.synth, ridge_sigma=sigma, peak_value=peak,
                         background_noise_sigma=noise, seed=seed)

    out_path = Path(out)
    fixture_id = out_path.name[:-5] if out_path.name.endswith(".cmap") else out_path.name
    repo = FixtureRepo(out_path.parent)
    if circle is not None:
        truth = Circle(*circle)
        cmap = confmap_from_circle(truth, size, cfg, threads=state.threads)
    else:
        curve = formats.read_polyline(outline)
        cmap = confmap_from_outline(curve, size, cfg, threads=state.threads)
    squares = []
    if occlusions:
        # occlusion draws use their own stream so they do not shift the noise
        cmap, squares = occlude_squares(cmap, occlusions, occlusion_side, cfg.seed + 1)

    if circle is not None:
        written = repo.add_circle_fixture(fixture_id, cmap, truth, squares)
    else:
        written = repo.add_shape_fixture(fixture_id, cmap, curve, squares)
    _manifest(ctx, out_path.parent / fixture_id, [outline] if outline else [], written)
    click.echo(f"wrote {fixture_id} ({size[0]}x{size[1]}, {len(squares)} occlusions)")


@cli.command("eval-circles")
@click.option("--fixtures", required=True, help="Fixture directory.")
@click.option("--tau", type=click.FloatRange(0.0, 1.0), default=None)
@click.option("--min-foreground", type=click.IntRange(min=3), default=None)
@click.option("--out-prefix", required=True, help="Writes <prefix>_records.txt and <prefix>_summary.txt.")
@click.pass_context
@handle_errors
def cmd_eval_circles(ctx, fixtures, tau, min_foreground, out_prefix):
    """Evaluate both circle fits over a fixture directory."""
    state: AppState = ctx.obj
    cfg = with_overrides(state.config.circle, tau=tau, min_foreground=min_foreground)
    report = evaluate_circle_suite(fixtures, cfg, threads=state.threads)
    _write_report(ctx, report, out_prefix, [str(f.cmap_path) for f in FixtureRepo(fixtures).circle_fixtures()])


@cli.command("eval-shapes")
@click.option("--fixtures", required=True, help="Fixture directory.")
@click.option("--model", "model_path", required=True, help="PDM v1 file.")
@click.option("--profile-length", type=float, default=None)
@click.option("--max-iter", type=click.IntRange(min=1), default=None)
@click.option("--tol", type=float, default=None)
@click.option("--rotations", type=click.IntRange(min=1), default=None)
@click.option("--reflection/--no-reflection", default=None)
@click.option("--out-prefix", required=True, help="Writes <prefix>_records.txt and <prefix>_summary.txt.")
@click.pass_context
@handle_errors
def cmd_eval_shapes(ctx, fixtures, model_path, profile_length, max_iter, tol, rotations, reflection, out_prefix):
    """Evaluate shape-model fits over a fixture directory."""
    state: AppState = ctx.obj
    cfg = _morph_config(state.config.morph, profile_length, max_iter, tol, rotations, reflection)
    model = formats.read_pdm(model_path)
    report = evaluate_shape_suite(fixtures, model, cfg, threads=state.threads)
    inputs = [model_path] + [str(f.cmap_path) for f in FixtureRepo(fixtures).shape_fixtures()]
    _write_report(ctx, report, out_prefix, inputs)


def _write_report(ctx, report, out_prefix, inputs) -> None:
    records = f"{out_prefix}_records.txt"
    summary = f"{out_prefix}_summary.txt"
    report.write_records(records)
    report.write_summary(summary)
    _manifest(ctx, out_prefix, inputs, [records, summary])
    click.echo(Path(summary).read_text(), nl=False)


if __name__ == "__main__":
    cli()
