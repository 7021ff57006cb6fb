from .dataset import (
    FORMAT_VERSION,
    CameraPath,
    ProbeTrack,
    SceneDataset,
    SceneSpec,
    export_dataset,
    load_dataset,
    make_scene,
)
from .presets import PRESETS, make_preset
from . import geometry

__all__ = [
    "FORMAT_VERSION", "CameraPath", "ProbeTrack", "SceneDataset", "SceneSpec",
    "export_dataset", "load_dataset", "make_scene", "PRESETS", "make_preset",
    "geometry",
]
