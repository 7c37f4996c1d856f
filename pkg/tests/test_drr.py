import math
import time

import numpy as np
import pytest

from config import RenderConfig
from core.errors import DegenerateGeometry, EmptyProjection, InvalidGeometry, OutOfRange
from core.metrics import distance_to_polyline
from core.types import Polyline
from drr.projection import TriangleMesh, project_mesh_ground_truth, project_vertices
from drr.render import (
    CameraGeometry,
    ap_camera,
    cast_ray,
    circular_mask,
    render,
    render_attenuation,
    scale_to_gray,
)
from drr.volume import CtVolume, hu_to_attenuation, trilinear_sample
from events import EventBus, FitEventType

MU = 0.02


def _water_cube(n=10):
    return CtVolume(np.zeros((n, n, n)))


def _lumpy_volume():
    rng = np.random.default_rng(21)
    return CtVolume(rng.uniform(-1024, 1500, size=(8, 9, 10)), spacing=(1.0, 1.2, 0.8))


def _small_camera(volume, size=(24, 20), **kw):
    return ap_camera(volume.center(), image_size=size, pixel_pitch=1.0, **kw)


# -------------------------
# CT numbers
# -------------------------
@pytest.mark.parametrize("ct, mu_w, expected", [
    (-1024.0, 0.7, 0.0),
    (0.0, 1.0, 1.0),
    (3071.0, 1.0, 3.9990234375),
])
def test_hu_to_attenuation(ct, mu_w, expected):
    assert hu_to_attenuation(ct, mu_w) == pytest.approx(expected, abs=1e-15)


def test_hu_to_attenuation_is_increasing():
    values = [hu_to_attenuation(ct, MU) for ct in np.linspace(-1024, 3071, 50)]
    assert np.all(np.diff(values) > 0.0)


@pytest.mark.parametrize("ct", [-1025.0, 3072.0])
def test_hu_out_of_range(ct):
    with pytest.raises(OutOfRange):
        hu_to_attenuation(ct, MU)


def test_volume_validation():
    with pytest.raises(OutOfRange):
        CtVolume(np.full((2, 2, 2), 4000.0))
    with pytest.raises(InvalidGeometry):
        CtVolume(np.zeros((2, 2)))
    with pytest.raises(InvalidGeometry):
        CtVolume(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))


# -------------------------
# Trilinear sampling
# -------------------------
def test_voxel_centre_reads_its_value():
    vol = _lumpy_volume()
    k, j, i = 3, 4, 5
    pos = np.asarray(vol.origin) + np.array([i, j, k]) * np.asarray(vol.spacing)
    assert trilinear_sample(vol, pos) == pytest.approx(vol.values[k, j, i], abs=1e-9)


def test_midpoint_between_voxels():
    values = np.zeros((2, 2, 2))
    values[:, :, 1] = 1000.0
    assert trilinear_sample(CtVolume(values), (0.5, 0.3, 0.7)) == pytest.approx(500.0)


def test_trilinear_field_is_reproduced():
    spacing, origin = (1.0, 2.0, 0.5), (-1.0, 0.0, 2.0)

    def f(x, y, z):
        return 1 + 2 * x + 3 * y - z + 0.5 * x * y + 0.25 * y * z - 0.1 * x * z + 0.05 * x * y * z

    zs, ys, xs = np.meshgrid(
        origin[2] + spacing[2] * np.arange(7),
        origin[1] + spacing[1] * np.arange(6),
        origin[0] + spacing[0] * np.arange(5),
        indexing="ij",
    )
    vol = CtVolume(f(xs, ys, zs), spacing=spacing, origin=origin)
    lo, hi = vol.bounds()
    for p in np.random.default_rng(8).uniform(lo, hi, size=(200, 3)):
        assert trilinear_sample(vol, p) == pytest.approx(f(*p), abs=1e-9)


def test_outside_the_grid_is_air():
    assert trilinear_sample(_water_cube(), (-0.5, 4.0, 4.0)) == -1024.0
    assert trilinear_sample(_water_cube(), (4.0, 4.0, 9.01)) == -1024.0


# -------------------------
# Ray casting
# -------------------------
def test_ray_through_air():
    vol = CtVolume(np.full((4, 4, 4), -1024.0))
    assert cast_ray(vol, (-3, 1, 1), (8, 2, 2), 500, MU) == 0.0


def test_water_cube_chord():
    a = cast_ray(_water_cube(), (-5.0, 4.5, 4.5), (15.0, 4.5, 4.5), 2000, MU)
    assert a == pytest.approx(MU * 9.0, abs=2 * (20.0 / 2000) * MU)


def test_refinement_shrinks_the_error():
    errors = [abs(cast_ray(_water_cube(), (0.0, 4.5, 4.5), (27.0, 4.5, 4.5), n, MU) - 9.0 * MU)
              for n in (2000, 4000, 8000, 16000)]
    np.testing.assert_allclose(errors, np.array([0.0045, 0.00225, 0.001125, 0.0005625]) * MU, atol=1e-12)
    assert errors == sorted(errors, reverse=True)


def test_ray_clipping_matches_full_sampling():
    vol = _lumpy_volume()
    start, end = np.array([-40.0, 3.0, 2.5]), np.array([60.0, 6.0, 4.0])
    n = 3000
    frac = (np.arange(n) + 0.5) / n
    samples = [trilinear_sample(vol, start + f * (end - start)) for f in frac]
    full = sum(hu_to_attenuation(s, MU) for s in samples) * np.linalg.norm(end - start) / n
    assert cast_ray(vol, start, end, n, MU) == pytest.approx(full, rel=1e-12)


def test_ray_missing_the_box_reads_nothing():
    assert cast_ray(_water_cube(), (-5.0, 20.0, 4.0), (15.0, 20.0, 4.0), 100, MU) == 0.0
    assert cast_ray(_water_cube(), (-5.0, 4.0, 4.0), (-1.0, 4.0, 4.0), 100, MU) == 0.0


def test_ray_arguments():
    with pytest.raises(ValueError):
        cast_ray(_water_cube(), (0, 0, 0), (1, 1, 1), 1, MU)
    with pytest.raises(InvalidGeometry):
        cast_ray(_water_cube(), (1, 1, 1), (1, 1, 1), 10, MU)


# -------------------------
# Camera
# -------------------------
def test_camera_validation():
    base = dict(focal_point=(0, -500, 0), detector_center=(0, 500, 0), pixel_pitch=1.0, image_size=(8, 8))
    with pytest.raises(InvalidGeometry):
        CameraGeometry(detector_u=(1, 0, 0), detector_v=(1, 0, 1e-3), **base)
    with pytest.raises(InvalidGeometry):
        CameraGeometry(detector_u=(2, 0, 0), detector_v=(0, 0, -1), **base)
    with pytest.raises(InvalidGeometry):
        CameraGeometry((0, 500, 3), (0, 500, 0), (1, 0, 0), (0, 0, -1), 1.0, (8, 8))
    with pytest.raises(InvalidGeometry):
        CameraGeometry(detector_u=(1, 0, 0), detector_v=(0, 0, -1), **{**base, "pixel_pitch": 0.0})


def test_circular_mask_is_the_inscribed_disk():
    mask = circular_mask(9, 9)
    assert mask[4, 4] and mask[4, 0] and mask[0, 4]
    assert not mask[0, 0] and not mask[8, 8]


# -------------------------
# Rendering
# -------------------------
def test_attenuation_is_non_negative_and_zero_off_object():
    vol = _water_cube()
    atten = render_attenuation(vol, _small_camera(vol, size=(40, 40)), RenderConfig(n_samples=400), threads=1)
    assert np.all(atten >= 0.0)
    assert atten[0, 0] == 0.0 and atten[20, 20] > 0.0


def test_all_air_renders_flat_white():
    vol = CtVolume(np.full((3, 3, 3), -1024.0))
    with pytest.warns(DegenerateGeometry):
        image = render(vol, _small_camera(vol), RenderConfig(n_samples=50), threads=1)
    assert np.all(image == 255)


def test_saturated_fraction_reaches_white():
    vol = _water_cube()
    image = render(vol, _small_camera(vol, size=(32, 32)), threads=2)
    assert np.count_nonzero(image == 255) >= math.ceil(0.025 * 32 * 32)
    assert image.min() == 20


def test_intensity_is_monotone_in_attenuation():
    vol = _lumpy_volume()
    camera = _small_camera(vol, size=(30, 30))
    config = RenderConfig(n_samples=300)
    atten = render_attenuation(vol, camera, config, threads=1)
    image = scale_to_gray(atten, config)
    order = np.argsort(atten, axis=None, kind="stable")
    assert np.all(np.diff(image.ravel()[order].astype(int)) <= 0)


def test_circular_mask_zeroes_the_corners():
    vol = _lumpy_volume()
    camera = _small_camera(vol, size=(30, 30), circular_mask=True)
    image = render(vol, camera, RenderConfig(n_samples=200), threads=1)
    disk = circular_mask(30, 30)
    assert np.all(image[~disk] == 0)
    assert np.all((image[disk] >= 20) & (image[disk] <= 255))


def test_mirrored_detector_mirrors_the_image():
    vol = _lumpy_volume()
    cam = _small_camera(vol)
    mirrored = CameraGeometry(cam.focal_point, cam.detector_center, tuple(-c for c in cam.detector_u),
                              cam.detector_v, cam.pixel_pitch, cam.image_size)
    config = RenderConfig(n_samples=200)
    np.testing.assert_array_equal(render(vol, mirrored, config, threads=1),
                                  np.fliplr(render(vol, cam, config, threads=1)))


def test_render_is_deterministic_across_thread_counts():
    vol = _lumpy_volume()
    cam = _small_camera(vol)
    config = RenderConfig(n_samples=200)
    np.testing.assert_array_equal(render(vol, cam, config, threads=1), render(vol, cam, config, threads=4))


def test_render_publishes_row_blocks():
    vol = _water_cube()
    bus = EventBus()
    rows = []
    bus.subscribe(lambda ev: rows.append(ev.value) if ev.type is FitEventType.RENDER_ROW_BLOCK else None)
    render_attenuation(vol, _small_camera(vol), RenderConfig(n_samples=50), bus=bus, threads=1)
    assert sum(rows) == 20


# -------------------------
# Mesh projection
# -------------------------
def _view():
    return ap_camera((0.0, 0.0, 0.0), image_size=(101, 101), pixel_pitch=1.0, source_detector=1000.0)


def test_vertices_obey_pinhole_magnification():
    tri = np.array([[10.0, 0.0, 5.0], [-4.0, 0.0, 2.0], [0.0, 0.0, -8.0]])
    xy, in_front = project_vertices(_view(), tri)
    assert in_front.all()
    # source-object 500 mm, source-detector 1000 mm
    expected = np.column_stack([50.0 + 2.0 * tri[:, 0], 50.0 - 2.0 * tri[:, 2]])
    np.testing.assert_allclose(xy, expected, atol=1e-6)
    np.testing.assert_allclose(xy[0], [70.0, 40.0], atol=1e-9)


def test_sphere_silhouette_matches_the_tangent_cone(sphere_mesh):
    outline, mask = project_mesh_ground_truth(sphere_mesh, _view(), closing_radius=3)
    radius = 1000.0 * 10.0 / math.sqrt(500.0 ** 2 - 10.0 ** 2)
    r = np.hypot(outline.vertices[:, 0] - 50.0, outline.vertices[:, 1] - 50.0)
    assert np.all(np.abs(r - radius) < 2.0)
    assert outline.closed
    assert mask[50, 50] and not mask[0, 0]


def test_cube_outline_follows_the_front_face(cube_mesh):
    closing = 3
    outline, _ = project_mesh_ground_truth(cube_mesh, _view(), closing_radius=closing)
    h = 10.0 * 1000.0 / 490.0
    square = Polyline(np.array([[50 - h, 50 - h], [50 + h, 50 - h], [50 + h, 50 + h], [50 - h, 50 + h]]),
                      closed=True)
    assert np.all(distance_to_polyline(outline.vertices, square) <= closing + 1)


def test_mesh_behind_the_focal_point():
    mesh = TriangleMesh(np.array([[0, -600, 0], [1, -600, 0], [0, -600, 1]], dtype=float), [[0, 1, 2]])
    with pytest.raises(EmptyProjection):
        project_mesh_ground_truth(mesh, _view())


def test_mesh_outside_the_image():
    mesh = TriangleMesh(np.array([[400, 0, 0], [401, 0, 0], [400, 0, 1]], dtype=float), [[0, 1, 2]])
    with pytest.raises(EmptyProjection):
        project_mesh_ground_truth(mesh, _view())


def test_mesh_validation():
    with pytest.raises(InvalidGeometry):
        TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3)))
    with pytest.raises(InvalidGeometry):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


# -------------------------
# Timing
# -------------------------
@pytest.mark.slow
def test_full_size_render_of_a_256_cube_is_fast():
    vol = CtVolume(np.zeros((256, 256, 256)), spacing=(0.5, 0.5, 0.5))
    camera = ap_camera(vol.center())
    started = time.perf_counter()
    atten = render_attenuation(vol, camera, RenderConfig(), threads=1)
    elapsed = time.perf_counter() - started
    assert atten.shape == (448, 448)
    assert atten[224, 224] == pytest.approx(MU * 127.5, abs=2 * (1000.0 / 2000) * MU)
    assert elapsed < 30.0
