import math

import numpy as np
import pytest

from roomsound.engine import EnergyImpulseResponse
from roomsound.rooms import BANDS_HZ, default_materials


@pytest.fixture(scope="session")
def db():
    return default_materials()


def exponential_response(t_s=1.0, cutoff_ms=1000.0, bin_ms=1.0,
                         direct_ms=0.0, scale=1.0):
    """Ideal single-slope decay: each bin holds the exact integral of
    exp(-13.8155 t / T) over its span, identically in all six bands."""
    k = math.log(1e6) / t_s
    n = int(round(cutoff_ms / bin_ms))
    edges = np.arange(n + 1) * bin_ms / 1000.0
    e = (np.exp(-k * edges[:-1]) - np.exp(-k * edges[1:])) / k * scale
    return EnergyImpulseResponse(BANDS_HZ, np.tile(e, (6, 1)), bin_ms,
                                 direct_ms)


def impulse_response(bin_index=0, n_bins=1000, bin_ms=1.0, value=1.0):
    bins = np.zeros((6, n_bins))
    bins[:, bin_index] = value
    return EnergyImpulseResponse(BANDS_HZ, bins, bin_ms, 0.0)
