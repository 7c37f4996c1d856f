import numpy as np
import pytest

from config import CpdConfig, MorphConfig, SynthConfig
from drr.projection import TriangleMesh
from fitting.pdm import align_training_shapes, as_points, build_pdm
from fitting.transform import SimilarityTransform2D
from synth.shapes import generate_shape_family

N_POINTS = 32


def egg_shape(n: int = N_POINTS) -> np.ndarray:
    """Closed contour with no rotational or mirror symmetry, ~30 px across."""
    phi = 2.0 * np.pi * np.arange(n) / n
    x = 30.0 * np.cos(phi) + 6.0 * np.cos(2.0 * phi)
    y = 20.0 * np.sin(phi) + 5.0 * np.cos(2.0 * phi)
    return np.column_stack([x, y]).ravel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def egg():
    return egg_shape()


@pytest.fixture(scope="session")
def shape_model():
    family = generate_shape_family(egg_shape(), 200, 2, [3.0, 2.0], seed=7)
    aligned, _ = align_training_shapes(family)
    return build_pdm(aligned, 0.99)


@pytest.fixture
def image_pose():
    """Places the unit-size model frame in a 128x128 image."""
    return SimilarityTransform2D(rotation=0.4, scale=140.0, translation=(64.0, 62.0))


@pytest.fixture
def fast_morph():
    return MorphConfig(cpd=CpdConfig(n_rotations=4, try_reflection=False))


@pytest.fixture
def clean_synth():
    return SynthConfig(background_noise_sigma=0.0)


@pytest.fixture
def make_instance():
    """(model, pose, b) -> (N, 2) image points of the model instance."""

    def make(model, pose, b):
        shape = model.mean + model.modes.T @ np.asarray(b, dtype=np.float64)
        return pose.apply(as_points(shape))

    return make


@pytest.fixture(scope="session")
def sphere_mesh():
    """UV sphere of radius 10 mm at the origin, ~0.3 mm vertex spacing."""
    n_lat, n_lon = 100, 200
    theta = np.pi * np.arange(1, n_lat) / n_lat
    phi = 2.0 * np.pi * np.arange(n_lon) / n_lon
    t, p = np.meshgrid(theta, phi, indexing="ij")
    ring = np.column_stack([
        (10.0 * np.sin(t) * np.cos(p)).ravel(),
        (10.0 * np.sin(t) * np.sin(p)).ravel(),
        (10.0 * np.cos(t)).ravel(),
    ])
    vertices = np.vstack([[0.0, 0.0, 10.0], ring, [0.0, 0.0, -10.0]])

    faces = []
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a = 1 + i * n_lon + j
            b = 1 + i * n_lon + (j + 1) % n_lon
            faces += [(a, b, a + n_lon), (b, b + n_lon, a + n_lon)]
    last = len(vertices) - 1
    for j in range(n_lon):
        faces.append((0, 1 + (j + 1) % n_lon, 1 + j))
        base = 1 + (n_lat - 2) * n_lon
        faces.append((last, base + j, base + (j + 1) % n_lon))
    return TriangleMesh(vertices, np.asarray(faces))


@pytest.fixture(scope="session")
def cube_mesh():
    """Axis-aligned cube of half-size 10 mm at the origin, faces sampled on a 0.5 mm grid."""
    g = np.linspace(-10.0, 10.0, 41)
    a, b = (m.ravel() for m in np.meshgrid(g, g, indexing="ij"))
    side = np.full_like(a, 10.0)
    verts = []
    for s in (side, -side):
        verts += [np.column_stack([s, a, b]), np.column_stack([a, s, b]), np.column_stack([a, b, s])]
    vertices = np.unique(np.vstack(verts), axis=0)
    faces = [(i, i + 1, i + 2) for i in range(0, len(vertices) - 2, 3)]
    return TriangleMesh(vertices, np.asarray(faces))
