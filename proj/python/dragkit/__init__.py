"""Point-based drag editing on a toy latent diffusion model."""

import json

from . import _core
from ._core import (
    DragkitError,
    aldd_schedule,
    ddim_denoise,
    ddim_invert,
    displacement_field,
    make_blob_scene,
    mean_distance,
    rasterize_drag_path,
    soft_mask,
)


def default_config():
    return json.loads(_core.default_config())


def run_drag_edit(image, pairs, config=None, seed=0):
    """Returns (edited image, report dict). `config` is a dict of config keys."""
    edited, report = _core.run_drag_edit(image, pairs, json.dumps(config or {}), seed)
    return edited, json.loads(report)


__all__ = [
    "DragkitError",
    "aldd_schedule",
    "ddim_denoise",
    "ddim_invert",
    "default_config",
    "displacement_field",
    "make_blob_scene",
    "mean_distance",
    "rasterize_drag_path",
    "run_drag_edit",
    "soft_mask",
]
