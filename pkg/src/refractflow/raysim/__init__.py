"""Physically based tracer over parametric glass solids.

Serves both as the synthetic data generator and as the ground-truth oracle
for the codec, the flow inversion and the depth refinement.
"""

from .optics import fresnel_transmittance, refract_dir, refract_many, slab_lateral_shift
from .render import (GeoChannels, boundary_from_mask, pixel_normal, pixel_uniform,
                     render_capture, render_channels, sensor_depths, sensor_model, trace_image)
from .scene import PatternPlane, Scene, SensorParams, table_scene
from .shapes import TransparentObject, local_aabb, rotation_about
from .tracer import RayOutcome, Status, TraceResult, trace_pixel, trace_pixels, trace_rays

__all__ = [
    "GeoChannels", "PatternPlane", "RayOutcome", "Scene", "SensorParams", "Status",
    "TraceResult", "TransparentObject", "boundary_from_mask", "fresnel_transmittance",
    "local_aabb", "pixel_normal", "pixel_uniform", "refract_dir", "refract_many",
    "render_capture", "render_channels", "rotation_about", "sensor_depths", "sensor_model",
    "slab_lateral_shift", "table_scene", "trace_image", "trace_pixel", "trace_pixels",
    "trace_rays",
]
