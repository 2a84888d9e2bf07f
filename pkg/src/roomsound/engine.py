"""Hybrid room-acoustics engine: image sources for the early specular part,
stochastic ray tracing for the late part.

Histogram values are time-integrated intensity at the receiver for a source
emitting unit energy per octave band, so the direct path contributes
``1/(4 pi d^2)``. The ray tracer estimates the same quantity with a
chord-length-weighted detection sphere, which makes the two parts of the
hybrid directly addable. All computed indices are ratios or times, so the
absolute unit drops out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .rooms import BANDS_HZ, N_BANDS, SceneGeometry


class EngineError(ValueError):
    """Invalid simulation parameters or degenerate geometry."""


@dataclass(frozen=True)
class SimulationParams:
    ray_count: int = 10000
    cutoff_ms: float = 1000.0
    temperature_c: float = 20.0
    rel_humidity_pct: float = 50.0
    pressure_hpa: float = 1000.0
    image_source_order: int = 2
    histogram_bin_ms: float = 1.0
    rng_seed: int = 0
    receiver_radius_m: float = 0.5
    air_absorption: bool = True

    def __post_init__(self):
        if self.ray_count < 1:
            raise EngineError(f"ray_count must be >= 1, got {self.ray_count}")
        if self.cutoff_ms <= 0.0:
            raise EngineError(f"cutoff_ms must be > 0, got {self.cutoff_ms}")
        if self.histogram_bin_ms <= 0.0:
            raise EngineError("histogram_bin_ms must be > 0")
        ratio = self.cutoff_ms / self.histogram_bin_ms
        if abs(ratio - round(ratio)) > 1e-9:
            raise EngineError(
                f"histogram bin ({self.histogram_bin_ms} ms) must divide the "
                f"cutoff ({self.cutoff_ms} ms)")
        if self.image_source_order < 0:
            raise EngineError("image_source_order must be >= 0")
        if self.receiver_radius_m <= 0.0:
            raise EngineError("receiver_radius_m must be > 0")
        if not -30.0 <= self.temperature_c <= 50.0:
            raise EngineError(
                f"temperature {self.temperature_c} degC outside [-30, 50]")
        if not 0.0 <= self.rel_humidity_pct <= 100.0:
            raise EngineError("relative humidity outside [0, 100] %")
        if self.pressure_hpa <= 0.0:
            raise EngineError("pressure must be positive")

    @property
    def n_bins(self):
        return int(round(self.cutoff_ms / self.histogram_bin_ms))

    def air_coefficients(self):
        """Per-band energy attenuation coefficients in 1/m (zeros if off)."""
        if not self.air_absorption:
            return np.zeros(N_BANDS)
        return np.array([
            air_absorption(b, self.temperature_c, self.rel_humidity_pct,
                           self.pressure_hpa) for b in BANDS_HZ])


@dataclass(frozen=True)
class EnergyImpulseResponse:
    bands: tuple[int, ...]
    bins: np.ndarray  # (n_bands, n_bins) energy per time bin
    bin_ms: float
    direct_arrival_ms: float

    @property
    def n_bins(self):
        return self.bins.shape[1]

    def times_ms(self):
        return np.arange(self.n_bins) * self.bin_ms

    def band_index(self, band_hz):
        if band_hz not in self.bands:
            raise EngineError(f"unsupported band {band_hz} Hz")
        return self.bands.index(band_hz)

    def to_text(self, path):
        """Columnar dump: time_ms then one energy column per band."""
        header = "time_ms " + " ".join(f"e{b}" for b in self.bands)
        data = np.column_stack([self.times_ms(), self.bins.T])
        np.savetxt(path, data, header=header,
                   comments=f"# direct_arrival_ms {self.direct_arrival_ms!r}\n# ")

    @classmethod
    def from_text(cls, path):
        with open(path) as fh:
            first = fh.readline()
        direct = float(first.split()[-1])
        data = np.loadtxt(path)
        times = data[:, 0]
        bin_ms = float(times[1] - times[0]) if len(times) > 1 else 1.0
        return cls(BANDS_HZ, np.ascontiguousarray(data[:, 1:].T), bin_ms, direct)


def speed_of_sound(temperature_c):
    """Linear approximation c = 331.4 + 0.6 T, valid for -30..50 degC."""
    if not -30.0 <= temperature_c <= 50.0:
        raise EngineError(
            f"temperature {temperature_c} degC outside supported range [-30, 50]")
    return 331.4 + 0.6 * temperature_c


def air_absorption(band_hz, temperature_c=20.0, rel_humidity_pct=50.0,
                   pressure_hpa=1000.0):
    """Atmospheric attenuation coefficient for energy, in 1/m.

    ISO 9613-1 pure-tone absorption evaluated at the band centre frequency,
    converted from dB/m to an exponential energy coefficient
    (``factor = exp(-m d)``).
    """
    if band_hz not in BANDS_HZ:
        raise EngineError(f"unsupported band {band_hz} Hz")
    alpha_db = iso9613_attenuation_db_per_m(
        float(band_hz), temperature_c, rel_humidity_pct, pressure_hpa)
    return alpha_db * math.log(10.0) / 10.0


def iso9613_attenuation_db_per_m(freq_hz, temperature_c, rel_humidity_pct,
                                 pressure_hpa):
    """ISO 9613-1 atmospheric absorption in dB/m at an arbitrary frequency."""
    T = 273.15 + temperature_c
    T0 = 293.15
    T01 = 273.16
    p_rel = pressure_hpa / 1013.25
    # molar concentration of water vapour (%)
    psat_rel = 10.0 ** (-6.8346 * (T01 / T) ** 1.261 + 4.6151)
    h = rel_humidity_pct * psat_rel / p_rel
    fr_o = p_rel * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h))
    fr_n = p_rel * (T / T0) ** -0.5 * (
        9.0 + 280.0 * h * math.exp(-4.170 * ((T / T0) ** (-1.0 / 3.0) - 1.0)))
    f2 = freq_hz * freq_hz
    alpha = 8.686 * f2 * (
        1.84e-11 / p_rel * (T / T0) ** 0.5
        + (T / T0) ** -2.5 * (
            0.01275 * math.exp(-2239.1 / T) / (fr_o + f2 / fr_o)
            + 0.1068 * math.exp(-3352.0 / T) / (fr_n + f2 / fr_n)))
    return alpha


def _shell_planes(geometry):
    planes = {}
    for s in geometry.surfaces:
        if s.is_shell:
            planes.setdefault((s.axis, s.coord), []).append(s)
    return list(planes.items())


def _reflect(point, axis, coord):
    p = list(point)
    p[axis] = 2.0 * coord - p[axis]
    return tuple(p)


def _segment_blocked(geometry, p0, p1, skip_planes):
    """True when [p0, p1] intersects any surface strictly between endpoints."""
    p0 = np.asarray(p0)
    d = np.asarray(p1) - p0
    for s in geometry.surfaces:
        if (s.axis, s.coord) in skip_planes:
            continue
        da = d[s.axis]
        if abs(da) < 1e-15:
            continue
        t = (s.coord - p0[s.axis]) / da
        if not 1e-9 < t < 1.0 - 1e-9:
            continue
        hit = p0 + t * d
        a1, a2 = _free_axes(s.axis)
        if (s.u0 - 1e-9 <= hit[a1] <= s.u1 + 1e-9 and
                s.v0 - 1e-9 <= hit[a2] <= s.v1 + 1e-9):
            return True
    return False


def _free_axes(axis):
    return ((1, 2), (0, 2), (0, 1))[axis]


def _panel_at(panels, axis, point):
    a1, a2 = _free_axes(axis)
    for s in panels:
        if (s.u0 - 1e-9 <= point[a1] <= s.u1 + 1e-9 and
                s.v0 - 1e-9 <= point[a2] <= s.v1 + 1e-9):
            return s
    return None


def image_source_early(geometry: SceneGeometry, params: SimulationParams):
    """Specular reflection paths up to ``image_source_order``.

    Returns a list of ``(arrival_ms, energy)`` tuples, ``energy`` a 6-vector,
    sorted by arrival time. Each candidate mirror sequence is validated by
    back-tracing the reflection points and checking every leg for occlusion
    by furniture or other shell surfaces.
    """
    c = speed_of_sound(params.temperature_c)
    air_m = params.air_coefficients()
    planes = _shell_planes(geometry)
    src = np.asarray(geometry.source)
    rcv = np.asarray(geometry.receiver)
    paths = []

    # order 0: direct sound
    d = float(np.linalg.norm(rcv - src))
    if d > 1e-12 and not _segment_blocked(geometry, src, rcv, set()):
        energy = np.exp(-air_m * d) / (4.0 * math.pi * d * d)
        paths.append((d / c * 1000.0, energy))

    sequences = [[]]
    for _ in range(params.image_source_order):
        new = []
        for seq in sequences:
            for pi in range(len(planes)):
                if seq and seq[-1] == pi:
                    continue
                new.append(seq + [pi])
        sequences = new
        for seq in sequences:
            path = _validate_sequence(geometry, planes, seq, src, rcv)
            if path is None:
                continue
            total_d, gain = path
            energy = gain * np.exp(-air_m * total_d) / (
                4.0 * math.pi * total_d * total_d)
            paths.append((total_d / c * 1000.0, energy))

    paths.sort(key=lambda p: p[0])
    return paths


def _validate_sequence(geometry, planes, seq, src, rcv):
    # images of the source, reflected through the sequence in order
    images = [np.asarray(src, dtype=float)]
    for pi in seq:
        axis, coord = planes[pi][0]
        images.append(np.asarray(_reflect(images[-1], axis, coord)))

    gain = np.ones(N_BANDS)
    points = [rcv]
    target = rcv
    for j in range(len(seq) - 1, -1, -1):
        axis, coord = planes[seq[j]][0]
        image = images[j + 1]
        dvec = image - target
        if abs(dvec[axis]) < 1e-15:
            return None
        t = (coord - target[axis]) / dvec[axis]
        if not 1e-9 < t < 1.0 - 1e-9:
            return None
        hit = target + t * dvec
        panel = _panel_at(planes[seq[j]][1], axis, hit)
        if panel is None:
            return None
        gain = gain * (1.0 - np.asarray(panel.material.absorption)) \
                    * (1.0 - np.asarray(panel.material.scattering))
        points.append(hit)
        target = hit
    points.append(np.asarray(src, dtype=float))

    plane_keys = [planes[pi][0] for pi in seq]
    for i in range(len(points) - 1):
        # endpoints sit on the mirror planes; exclude those two planes from
        # the occlusion test for this leg
        skip = set()
        if i > 0:
            skip.add(plane_keys[len(seq) - i])
        if i < len(seq):
            skip.add(plane_keys[len(seq) - 1 - i])
        if _segment_blocked(geometry, points[i], points[i + 1], skip):
            return None

    total_d = float(np.linalg.norm(images[-1] - rcv))
    if total_d < 1e-12:
        return None
    return total_d, gain


def ray_trace_late(geometry: SceneGeometry, params: SimulationParams,
                   exclude_order=None):
    """Stochastic ray-traced part of the response.

    ``exclude_order`` defaults to ``params.image_source_order``: crossings of
    purely specular paths up to that reflection count are left to the image
    source part. Pass ``-1`` to histogram everything (standalone use).

    Returns ``(hist, inflight, leaked)`` as in the kernel.
    """
    for s in geometry.surfaces:
        if s.area <= 1e-12:
            raise EngineError(
                f"degenerate zero-area surface {s.label!r} on axis {s.axis} "
                f"at {s.coord}")
    if exclude_order is None:
        exclude_order = params.image_source_order
    c = speed_of_sound(params.temperature_c)
    air_m = params.air_coefficients()
    ax, coord, bounds, nsign, alpha, scat = geometry.arrays()
    scat_mean = scat.mean(axis=1)
    hist, inflight, leaked = _kernels.ray_trace(
        ax, coord, bounds, nsign, alpha, scat_mean,
        np.asarray(geometry.source), np.asarray(geometry.receiver),
        params.receiver_radius_m, params.ray_count, c, air_m,
        params.cutoff_ms / 1000.0, params.histogram_bin_ms / 1000.0,
        params.n_bins, params.rng_seed, exclude_order)
    return hist, inflight, leaked


def simulate(geometry: SceneGeometry, params: SimulationParams
             ) -> EnergyImpulseResponse:
    """Merge the image-source and ray-traced parts into a binned response."""
    hist, _inflight, _leaked = ray_trace_late(geometry, params)
    hist = hist.copy()
    for arrival_ms, energy in image_source_early(geometry, params):
        bin_i = int(arrival_ms / params.histogram_bin_ms)
        if bin_i < params.n_bins:
            hist[:, bin_i] += energy
    src = np.asarray(geometry.source)
    rcv = np.asarray(geometry.receiver)
    direct_ms = float(np.linalg.norm(rcv - src)) / \
        speed_of_sound(params.temperature_c) * 1000.0
    return EnergyImpulseResponse(BANDS_HZ, hist, params.histogram_bin_ms,
                                 direct_ms)
