"""Room-acoustics surrogate pipeline.

Simulate shoebox rooms (hybrid image source + stochastic ray tracing),
extract standard acoustic indices, train small MLP surrogates on swept
grids, explain them with exact Shapley values, and serve predictions
over HTTP.
"""

from .engine import (EnergyImpulseResponse, SimulationParams,
                     air_absorption, simulate, speed_of_sound)
from .indices import AcousticIndices, compute_all
from .rooms import (BANDS_HZ, MaterialSpec, RoomConfig, SceneGeometry,
                    build_geometry, default_materials)

__version__ = "0.1.0"

__all__ = [
    "BANDS_HZ", "MaterialSpec", "RoomConfig", "SceneGeometry",
    "build_geometry", "default_materials", "SimulationParams",
    "EnergyImpulseResponse", "simulate", "speed_of_sound",
    "air_absorption", "AcousticIndices", "compute_all", "__version__",
]
