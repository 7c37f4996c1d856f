from synth.confmap import Square, confmap_from_circle, confmap_from_outline, occlude_squares
from synth.shapes import circle_outline, generate_shape_family

__all__ = [
    "Square",
    "circle_outline",
    "confmap_from_circle",
    "confmap_from_outline",
    "generate_shape_family",
    "occlude_squares",
]
