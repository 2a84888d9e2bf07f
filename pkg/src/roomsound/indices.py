"""Acoustic indices derived from band energy impulse responses.

Five targets: T30 and EDT (decay times from the backward-integrated curve),
C80 (early/late ratio, 80 ms split), D50 (early fraction, 50 ms), and STI
(modulation-transfer based intelligibility). Sabine and Eyring closed forms
are included as analytic baselines. Everything here is invariant to uniform
scaling of the histogram, so the engine's energy unit never leaks in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import EnergyImpulseResponse
from .rooms import BANDS_HZ, N_BANDS, SceneGeometry

# third-octave spaced modulation frequencies, 0.63 to 12.5 Hz
MODULATION_FREQS_HZ = (0.63, 0.8, 1.0, 1.25, 1.6, 2.0, 2.5,
                       3.15, 4.0, 5.0, 6.3, 8.0, 10.0, 12.5)

# male-speech octave weights for 125..4000 Hz, renormalized to sum to 1
# after dropping the 8 kHz band the simulator does not produce
_RAW_BAND_WEIGHTS = (0.085, 0.127, 0.230, 0.233, 0.309, 0.224)
STI_BAND_WEIGHTS = tuple(w / sum(_RAW_BAND_WEIGHTS) for w in _RAW_BAND_WEIGHTS)

LEVEL_FLOOR_DB = -400.0

TARGET_NAMES = tuple(f"{idx}_{b}" for idx in ("t30", "edt", "c80", "d50")
                     for b in BANDS_HZ) + ("sti",)


class IndicesError(ValueError):
    """Index extraction failed (zero energy, malformed response)."""


class InsufficientDecayError(IndicesError):
    """Decay curve never reaches the requested lower level.

    Callers may extend the simulation cutoff, or fall back to a shorter
    evaluation range (see compute_all).
    """


@dataclass(frozen=True)
class DecayCurve:
    band_hz: int
    times_ms: np.ndarray
    level_db: np.ndarray  # nonincreasing, 0 dB at t=0


@dataclass(frozen=True)
class AcousticIndices:
    """The 25 scalars: four band indices at six bands, plus STI."""
    t30: tuple[float, ...]
    edt: tuple[float, ...]
    c80: tuple[float, ...]
    d50: tuple[float, ...]
    sti: float
    t30_quality: tuple[str, ...]  # "t30" or "t20" (shortened fit range)
    sabine: tuple[float, ...] | None = None
    eyring: tuple[float, ...] | None = None

    def to_dict(self):
        out = {}
        for i, b in enumerate(BANDS_HZ):
            out[f"t30_{b}"] = self.t30[i]
            out[f"edt_{b}"] = self.edt[i]
            out[f"c80_{b}"] = self.c80[i]
            out[f"d50_{b}"] = self.d50[i]
        out["sti"] = self.sti
        return out

    def to_record(self):
        """Flat record: the 25 scalars plus per-band fit quality flags."""
        out = self.to_dict()
        for i, b in enumerate(BANDS_HZ):
            out[f"t30_quality_{b}"] = self.t30_quality[i]
        return out


def schroeder_integrate(response: EnergyImpulseResponse, band_hz) -> DecayCurve:
    """Backward-integrated decay curve, normalized to 0 dB at t=0."""
    e = response.bins[response.band_index(band_hz)]
    total = float(e.sum())
    if not total > 0.0:
        raise IndicesError(f"zero energy in {band_hz} Hz band")
    tail = np.cumsum(e[::-1])[::-1] / total
    with np.errstate(divide="ignore"):
        level = 10.0 * np.log10(tail)
    level = np.maximum(level, LEVEL_FLOOR_DB)
    return DecayCurve(band_hz, response.times_ms(), level)


def fit_reverberation(curve: DecayCurve, upper_db, lower_db) -> float:
    """Decay time from a least-squares line over the [upper, lower] window.

    Returns -60/slope in seconds. T30 uses (-5, -35); EDT uses (0, -10).
    """
    if lower_db >= upper_db:
        raise IndicesError("lower_db must be below upper_db")
    level = curve.level_db
    if level.min() > lower_db:
        raise InsufficientDecayError(
            f"curve bottoms out at {level.min():.1f} dB, never reaching "
            f"{lower_db} dB; extend the cutoff or use a shorter range")
    mask = (level <= upper_db + 1e-12) & (level >= lower_db - 1e-12)
    if mask.sum() < 2:
        raise InsufficientDecayError(
            f"fewer than 2 samples between {upper_db} and {lower_db} dB")
    t = curve.times_ms[mask] / 1000.0
    slope, _ = np.polyfit(t, level[mask], 1)
    if slope >= 0.0:
        raise IndicesError("nondecaying curve in fit range")
    return -60.0 / slope


def _split_energy(e, bin_ms, t_split_ms):
    # fractional bin split so the window boundary is honored exactly
    pos = t_split_ms / bin_ms
    k = int(math.floor(pos))
    if k >= len(e):
        return float(e.sum()), 0.0
    early = float(e[:k].sum()) + float(e[k]) * (pos - k)
    return early, float(e.sum()) - early


def clarity_c80(response: EnergyImpulseResponse, band_hz) -> float:
    """10 log10(early/late) with an 80 ms split after the direct arrival.

    Returns +inf when the late window holds no energy.
    """
    e = response.bins[response.band_index(band_hz)]
    if not e.sum() > 0.0:
        raise IndicesError(f"zero energy in {band_hz} Hz band")
    early, late = _split_energy(e, response.bin_ms,
                                response.direct_arrival_ms + 80.0)
    if late <= 0.0:
        return math.inf
    return 10.0 * math.log10(early / late)


def definition_d50(response: EnergyImpulseResponse, band_hz) -> float:
    """Fraction of total energy within 50 ms of the direct arrival."""
    e = response.bins[response.band_index(band_hz)]
    total = float(e.sum())
    if not total > 0.0:
        raise IndicesError(f"zero energy in {band_hz} Hz band")
    early, _ = _split_energy(e, response.bin_ms,
                             response.direct_arrival_ms + 50.0)
    return early / total


def modulation_transfer(e, bin_s, freq_hz):
    """Noise-free MTF magnitude for one band histogram at one frequency."""
    t = (np.arange(len(e)) + 0.5) * bin_s
    total = e.sum()
    return float(np.abs(np.sum(e * np.exp(-2j * math.pi * freq_hz * t))) / total)


def sti(response: EnergyImpulseResponse) -> float:
    """Speech transmission index from noise-free modulation transfer.

    m(F) per band over the 14 standard modulation frequencies; apparent
    SNR = 10 log10(m/(1-m)) clipped to +-15 dB; TI = (SNR+15)/30; band TI
    averaged over F; bands combined with male-speech weights.
    """
    bin_s = response.bin_ms / 1000.0
    band_ti = np.empty(N_BANDS)
    for bi, b in enumerate(response.bands):
        e = response.bins[bi]
        if not e.sum() > 0.0:
            raise IndicesError(f"zero energy in {b} Hz band")
        m = np.array([modulation_transfer(e, bin_s, f)
                      for f in MODULATION_FREQS_HZ])
        m = np.clip(m, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            snr = 10.0 * np.log10(m / (1.0 - m))
        snr = np.clip(snr, -15.0, 15.0)
        band_ti[bi] = np.mean((snr + 15.0) / 30.0)
    return float(np.dot(STI_BAND_WEIGHTS, band_ti))


def sabine_t(volume_m3, absorption_m2) -> float:
    """T = 0.161 V / (sum of alpha*S), the Sabine estimate."""
    if volume_m3 <= 0.0 or absorption_m2 <= 0.0:
        raise IndicesError("volume and total absorption must be positive")
    return 0.161 * volume_m3 / absorption_m2

def eyring_t(volume_m3, total_area_m2, mean_alpha) -> float:
    """T = 0.161 V / (-S ln(1 - mean alpha)), the Eyring estimate."""
    if volume_m3 <= 0.0 or total_area_m2 <= 0.0:
        raise IndicesError("volume and area must be positive")
    if not 0.0 < mean_alpha < 1.0:
        raise IndicesError(f"mean absorption {mean_alpha} outside (0, 1)")
    return 0.161 * volume_m3 / (-total_area_m2 * math.log(1.0 - mean_alpha))


def band_absorption_area(geometry: SceneGeometry):
    """Per-band sum of alpha*S over every surface (furniture included)."""
    a = np.zeros(N_BANDS)
    for s in geometry.surfaces:
        a += s.area * np.asarray(s.material.absorption)
    return a


def compute_all(response: EnergyImpulseResponse,
                geometry: SceneGeometry | None = None) -> AcousticIndices:
    """All 25 scalars from one response; analytic baselines when geometry
    is given.

    T30 falls back to a (-5, -25) fit with a "t20" quality flag when the
    decay never reaches -35 dB inside the cutoff. Per-band errors are
    aggregated so a zero-energy response reports every failure at once.
    """
    t30, edt, c80v, d50v, quality = [], [], [], [], []
    problems = []
    for b in BANDS_HZ:
        try:
            curve = schroeder_integrate(response, b)
            try:
                t30.append(fit_reverberation(curve, -5.0, -35.0))
                quality.append("t30")
            except InsufficientDecayError:
                t30.append(fit_reverberation(curve, -5.0, -25.0))
                quality.append("t20")
            edt.append(fit_reverberation(curve, 0.0, -10.0))
            c80v.append(clarity_c80(response, b))
            d50v.append(definition_d50(response, b))
        except IndicesError as exc:
            problems.append(f"{b} Hz: {exc}")
    try:
        sti_value = sti(response)
    except IndicesError as exc:
        problems.append(f"sti: {exc}")
    if problems:
        raise IndicesError("; ".join(problems))

    sab = eyr = None
    if geometry is not None:
        v = geometry.volume
        s_tot = geometry.total_area
        a = band_absorption_area(geometry)
        sab = tuple(sabine_t(v, a[i]) for i in range(N_BANDS))
        eyr = tuple(eyring_t(v, s_tot, a[i] / s_tot) for i in range(N_BANDS))
    return AcousticIndices(tuple(t30), tuple(edt), tuple(c80v), tuple(d50v),
                           sti_value, tuple(quality), sab, eyr)
