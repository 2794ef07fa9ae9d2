"""The seven laser-like sensors compared in the ablations."""

from __future__ import annotations

from enum import Enum
from typing import Optional

import numpy as np

from pseudolaser_nav.camera import ideal_laser, render_hits
from pseudolaser_nav.config import CameraModel, NoiseParams, SensingConfig
from pseudolaser_nav.pseudolaser import (
    PseudoLaser,
    apply_semantic_mask,
    augment_noise,
    slice_min_pool,
    slice_row,
    unmasked,
)
from pseudolaser_nav.world import WorldState


class SensingMode(str, Enum):
    IDEAL_LASER_BOTTOM = "ideal_laser_bottom"
    IDEAL_LASER_TOP = "ideal_laser_top"
    DEPTH_1D_SLICE = "depth_1d_slice"
    DEPTH_MINPOOL = "depth_minpool"
    DEPTH_1D_SEMANTIC = "depth_1d_semantic"
    DEPTH_MINPOOL_SEMANTIC = "depth_minpool_semantic"
    DEPTH_MINPOOL_SEMANTIC_NOISE = "depth_minpool_semantic_noise"

    @property
    def uses_camera(self) -> bool:
        return self not in (SensingMode.IDEAL_LASER_BOTTOM, SensingMode.IDEAL_LASER_TOP)

    @property
    def semantic(self) -> bool:
        return self in (
            SensingMode.DEPTH_1D_SEMANTIC,
            SensingMode.DEPTH_MINPOOL_SEMANTIC,
            SensingMode.DEPTH_MINPOOL_SEMANTIC_NOISE,
        )

    @property
    def min_pool(self) -> bool:
        return self in (
            SensingMode.DEPTH_MINPOOL,
            SensingMode.DEPTH_MINPOOL_SEMANTIC,
            SensingMode.DEPTH_MINPOOL_SEMANTIC_NOISE,
        )


class Sensor:
    """Turns a world and an agent index into one pseudo-laser frame."""

    def __init__(
        self,
        camera: CameraModel,
        sensing: Optional[SensingConfig] = None,
        noise: Optional[NoiseParams] = None,
    ) -> None:
        self.camera = camera
        self.sensing = sensing or SensingConfig()
        self.mode = SensingMode(self.sensing.mode)
        self.noise = noise or NoiseParams()

    @property
    def d_laser(self) -> int:
        return self.camera.image_width

    def measure(
        self,
        world: WorldState,
        agent_index: int,
        rng: Optional[np.random.Generator] = None,
        augment: bool = False,
    ) -> PseudoLaser:
        """Measure one frame; ``augment`` applies the training-time noise model.

        The ``depth_minpool_semantic_noise`` variant senses exactly like
        ``depth_minpool_semantic``; it differs only in being trained with
        augmentation.
        """
        mode = self.mode
        if mode is SensingMode.IDEAL_LASER_BOTTOM:
            laser = ideal_laser(world, agent_index, self.camera, self.sensing.bottom_laser_height)
        elif mode is SensingMode.IDEAL_LASER_TOP:
            laser = ideal_laser(world, agent_index, self.camera, self.sensing.top_laser_height)
        else:
            hits = render_hits(world, agent_index, self.camera)
            depth = hits.depth()
            masked = (
                apply_semantic_mask(depth, hits.traversability()) if mode.semantic else unmasked(depth)
            )
            if mode.min_pool:
                laser = slice_min_pool(masked)
            else:
                laser = slice_row(masked, self.sensing.slice_row)

        if augment:
            if rng is None:
                raise ValueError("augmentation needs an rng")
            laser = augment_noise(laser, self.noise, rng)
        return laser
