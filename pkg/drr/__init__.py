from drr.projection import TriangleMesh, project_mesh_ground_truth
from drr.render import CameraGeometry, ap_camera, cast_ray, render, render_attenuation
from drr.volume import CtVolume, hu_to_attenuation, trilinear_sample

__all__ = [
    "CameraGeometry",
    "CtVolume",
    "TriangleMesh",
    "ap_camera",
    "cast_ray",
    "hu_to_attenuation",
    "project_mesh_ground_truth",
    "render",
    "render_attenuation",
    "trilinear_sample",
]
