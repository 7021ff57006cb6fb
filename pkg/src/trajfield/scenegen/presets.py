"""Built-in scene presets.

All presets keep every pixel covered by geometry (a large background
plane) so depth and flow ground truth are dense, and keep all content
inside the reference NDC frustum for the camera path used.
"""

import numpy as np

from . import geometry as geo
from .dataset import CameraPath, SceneSpec


def _background_plane(z=-6.0):
    smooth = geo.smooth_texture(
        base=(0.45, 0.42, 0.50), amp=(0.26, 0.24, 0.22),
        freq=(0.9, 0.7), phases=(0.0, 2.1, 4.2))
    check = geo.checker_texture(2.2, (0.78, 0.72, 0.38), (0.32, 0.36, 0.58))
    return geo.Plane(texture=geo.blend_textures(smooth, check, 0.35),
                     point=(0.0, 0.0, z), n=(0.0, 0.0, 1.0))


def _sphere_texture():
    return geo.smooth_texture(
        base=(0.78, 0.32, 0.26), amp=(0.15, 0.18, 0.12),
        freq=(1.8, 1.4), phases=(0.5, 1.8, 3.6))


def static_plane(T=24):
    return SceneSpec(name="static-plane", T=T,
                     path=CameraPath(kind="slide", amplitude=0.55),
                     objects=[_background_plane()])


def moving_sphere(T=24):
    sphere = geo.Sphere(
        texture=_sphere_texture(),
        motion=geo.SinusoidMotion(amplitude=(0.85, 0.3, 0.4), cycles=0.75, T=T),
        center=(0.0, 0.0, -4.4), radius=1.0)
    return SceneSpec(name="moving-sphere", T=T,
                     path=CameraPath(kind="slide", amplitude=0.55),
                     objects=[_background_plane(), sphere])


def occluder(T=24):
    """A box sweeps across the view in front of a textured background:
    space that is empty early in the sequence becomes occupied as the box
    passes, the classic temporal-occlusion failure case for naive warping.
    The sweep starts just outside the image so the first and last frames
    have an empty motion mask."""
    span = 6.4
    box = geo.Box(
        texture=geo.smooth_texture(base=(0.30, 0.65, 0.35),
                                   amp=(0.15, 0.20, 0.15),
                                   freq=(2.0, 1.5), phases=(1.0, 2.5, 4.0)),
        motion=geo.LinearMotion(velocity=(-span / (T - 1), 0.0, 0.0)),
        center=(span / 2.0, 0.0, -4.0), half=(0.7, 1.6, 0.3))
    return SceneSpec(name="occluder", T=T,
                     path=CameraPath(kind="slide", amplitude=0.3),
                     objects=[_background_plane(), box])


def specular_sphere(T=24):
    """Moving sphere with a strong view-dependent highlight; exercises the
    time input of the color head."""
    spec = moving_sphere(T)
    spec.name = "specular-sphere"
    spec.objects[1].specular = 0.5
    spec.objects[1].shininess = 32.0
    return spec


PRESETS = {
    "static-plane": static_plane,
    "moving-sphere": moving_sphere,
    "occluder": occluder,
    "specular-sphere": specular_sphere,
}


def make_preset(name, T=24):
    if name not in PRESETS:
        raise KeyError(
            f"unknown preset '{name}'; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name](T=T)
