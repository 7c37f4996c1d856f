import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import SynthConfig
from core.errors import AmplitudeMismatch, OutOfRange, ShapeMismatch
from core.types import Circle, ConfidenceMap, Polyline
from fitting.circle import FitMethod, detect_circle
from fitting.pdm import build_pdm
from synth import (
    circle_outline,
    confmap_from_circle,
    confmap_from_outline,
    generate_shape_family,
    occlude_squares,
)
from synth.shapes import deformation_fields

LINE = Polyline(np.array([[2.0, 10.0], [30.0, 10.0]]))


# -------------------------
# Confidence maps
# -------------------------
def test_ridge_peaks_on_the_outline(clean_synth):
    cmap = confmap_from_outline(LINE, (32, 20), clean_synth, threads=1)
    assert cmap.at(15, 10) == pytest.approx(clean_synth.peak_value)


def test_ridge_profile_follows_the_gaussian():
    config = SynthConfig(ridge_sigma=2.0, peak_value=0.8, background_noise_sigma=0.0)
    cmap = confmap_from_outline(LINE, (32, 20), config, threads=1)
    assert cmap.at(15, 16) == pytest.approx(0.8 * math.exp(-4.5), rel=1e-12)


def test_same_seed_same_map_other_seed_other_map():
    a = confmap_from_outline(LINE, (32, 20), SynthConfig(seed=5), threads=1)
    b = confmap_from_outline(LINE, (32, 20), SynthConfig(seed=5), threads=3)
    c = confmap_from_outline(LINE, (32, 20), SynthConfig(seed=6), threads=1)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**63), st.floats(0.0, 0.5))
def test_noisy_maps_stay_in_unit_range(seed, noise):
    cmap = confmap_from_outline(LINE, (16, 16), SynthConfig(background_noise_sigma=noise, seed=seed), threads=1)
    assert cmap.values.min() >= 0.0 and cmap.values.max() <= 1.0


def test_circle_map_feeds_detection(clean_synth):
    truth = Circle(64.0, 64.0, 30.0)
    cmap = confmap_from_circle(truth, (128, 128), clean_synth, threads=2)
    det = detect_circle(cmap, method=FitMethod.GEOMETRIC)
    np.testing.assert_allclose(det.circle.as_array(), truth.as_array(), atol=0.5)


def test_circle_map_agrees_with_dense_polygon(clean_synth):
    truth = Circle(20.0, 18.0, 9.0)
    exact = confmap_from_circle(truth, (40, 40), clean_synth, threads=1)
    polygon = confmap_from_outline(circle_outline(truth, 2000), (40, 40), clean_synth, threads=1)
    np.testing.assert_allclose(exact.values, polygon.values, atol=1e-3)


def test_outline_outside_the_image_only_warns(clean_synth, caplog):
    far = Polyline(np.array([[-5.0, 3.0], [40.0, 3.0]]))
    confmap_from_outline(far, (10, 10), clean_synth, threads=1)
    assert "extends beyond" in caplog.text


# -------------------------
# Occlusion
# -------------------------
def _flat(size=20, value=0.7):
    return ConfidenceMap(np.full((size, size), value))


def test_no_squares_leaves_the_map_alone():
    cmap = _flat()
    out, squares = occlude_squares(cmap, 0, (3, 5), seed=1)
    np.testing.assert_array_equal(out.values, cmap.values)
    assert squares == []


def test_full_image_square_zeroes_everything():
    out, squares = occlude_squares(_flat(), 1, (20, 20), seed=1)
    assert squares[0].side == 20 and (squares[0].x0, squares[0].y0) == (0, 0)
    assert not out.values.any()


def test_occlusion_is_reproducible():
    assert occlude_squares(_flat(), 4, (2, 6), seed=9)[1] == occlude_squares(_flat(), 4, (2, 6), seed=9)[1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6), st.integers(1, 20), st.integers(0, 2**32))
def test_occlusion_only_lowers_values(n, side, seed):
    cmap = ConfidenceMap(np.random.default_rng(seed).random((20, 20)))
    out, squares = occlude_squares(cmap, n, (1, side), seed)
    assert len(squares) == n
    assert np.all(out.values <= cmap.values)
    for sq in squares:
        assert 0 <= sq.x0 <= 20 - sq.side and 0 <= sq.y0 <= 20 - sq.side
        assert not out.values[sq.y0:sq.y0 + sq.side, sq.x0:sq.x0 + sq.side].any()


@pytest.mark.parametrize("side_range", [(0, 3), (5, 4), (3, 21)])
def test_side_range_must_fit(side_range):
    with pytest.raises(OutOfRange):
        occlude_squares(_flat(), 1, side_range, seed=0)


# -------------------------
# Shape families
# -------------------------
def test_deformation_fields_are_orthonormal():
    fields = deformation_fields(32, 10)
    np.testing.assert_allclose(fields @ fields.T, np.eye(10), atol=1e-12)
    with pytest.raises(ShapeMismatch):
        deformation_fields(4, 9)


def test_zero_amplitudes_copy_the_base(egg):
    family = generate_shape_family(egg, 5, 3, [0.0, 0.0, 0.0], seed=1)
    assert len(family) == 5
    for shape in family:
        np.testing.assert_array_equal(shape, egg)


def test_single_mode_family_yields_single_mode_model(egg):
    family = generate_shape_family(egg, 200, 1, [2.5], seed=3)
    model = build_pdm(family, 0.99)
    assert model.n_modes == 1
    assert math.sqrt(model.eigenvalues[0]) == pytest.approx(2.5, rel=0.15)


def test_k_mode_family_selects_k_modes(egg):
    family = generate_shape_family(egg, 150, 3, [3.0, 2.0, 1.5], seed=4)
    assert build_pdm(family, 0.99).n_modes == 3


def test_family_is_reproducible(egg):
    a = generate_shape_family(egg, 4, 2, [1.0, 1.0], seed=12)
    b = generate_shape_family(egg, 4, 2, [1.0, 1.0], seed=12)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_amplitude_count_must_match(egg):
    with pytest.raises(AmplitudeMismatch):
        generate_shape_family(egg, 4, 2, [1.0], seed=0)


def test_circle_outline_vertices_lie_on_the_circle():
    outline = circle_outline(Circle(3.0, 4.0, 5.0), 12)
    assert outline.closed and len(outline) == 12
    np.testing.assert_allclose(np.hypot(outline.vertices[:, 0] - 3, outline.vertices[:, 1] - 4), 5.0)
