"""Hot numeric kernels for the stochastic ray tracer.

The kernels compile with numba's ``@njit(nogil=True)`` by default so sweeps
can run threaded. Setting the environment variable ``ROOMSOUND_NUMBA`` to
``0``/``off``/``false`` (or running without numba installed) executes the
identical function bodies as plain NumPy/Python, so both backends produce
bit-identical histograms for a given seed; ``benchmarks/ray_kernel_bench.py``
compares their throughput.

The per-ray random substream is a SplitMix64 counter generator: the stream
for ray ``i`` depends only on ``(seed, i)``, never on scheduling, which keeps
parallel sweeps deterministic.
"""

import os

import numpy as np

_FLAG = os.environ.get("ROOMSOUND_NUMBA", "").strip().lower()
NUMBA_ENABLED = _FLAG not in ("0", "off", "false", "no")
if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False
if not NUMBA_ENABLED:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(func):
            return func

        return deco

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)


@njit(cache=True, nogil=True)
def _mix64(z):
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@njit(cache=True, nogil=True)
def _rng_next(state):
    state = state + _GOLDEN
    return state, _mix64(state)


@njit(cache=True, nogil=True)
def _to_unit(z):
    # 53 high bits -> [0, 1)
    return float(z >> U64(11)) * (1.0 / 9007199254740992.0)


def ray_seed(seed, ray_index):
    """Initial SplitMix64 state of one ray's substream."""
    with np.errstate(over="ignore"):
        return _ray_seed(int(seed) & 0xFFFFFFFFFFFFFFFF, ray_index)


@njit(cache=True, nogil=True)
def _ray_seed(seed, ray_index):
    return _mix64(U64(seed) ^ (U64(ray_index + 1) * _GOLDEN))


@njit(cache=True, nogil=True)
def _ray_trace_kernel(ax, coord, bounds, nsign, alpha, scat_mean,
                      src, rcv, radius, n_rays, c_sound, air_m,
                      cutoff_s, bin_s, n_bins, seed, exclude_order):
    """Trace ``n_rays`` energy rays and histogram receiver-sphere crossings.

    Returns ``(hist, inflight, leaked)``: the per-band time histogram in
    time-integrated-intensity units, the per-band energy still carried by
    rays alive at the cutoff, and the per-band energy of rays that escaped
    the shell through numerical cracks (normally ~0).

    Crossings of a still purely specular ray whose reflection count does not
    exceed ``exclude_order`` are skipped; those paths belong to the image
    source part of the hybrid model.
    """
    n_surf = ax.shape[0]
    n_bands = alpha.shape[1]
    hist = np.zeros((n_bands, n_bins))
    inflight = np.zeros(n_bands)
    leaked = np.zeros(n_bands)
    vol_sphere = 4.0 / 3.0 * np.pi * radius * radius * radius
    w0 = 1.0 / n_rays
    kill = 1e-9 * w0
    max_dist = cutoff_s * c_sound
    eps = 1e-9

    for ray in range(n_rays):
        state = _ray_seed(seed, ray)
        state, z = _rng_next(state)
        u1 = _to_unit(z)
        state, z = _rng_next(state)
        u2 = _to_unit(z)
        dz_ = 1.0 - 2.0 * u1
        st = np.sqrt(max(0.0, 1.0 - dz_ * dz_))
        phi = 2.0 * np.pi * u2
        dx = st * np.cos(phi)
        dy = st * np.sin(phi)
        dz = dz_
        px = src[0]
        py = src[1]
        pz = src[2]
        w = np.full(n_bands, w0)
        dist = 0.0
        spec_count = 0
        diffused = False

        for _bounce in range(1000000):
            # nearest surface hit along the current segment
            t_hit = 1e30
            hit = -1
            for s in range(n_surf):
                a = ax[s]
                if a == 0:
                    d_a = dx
                    p_a = px
                elif a == 1:
                    d_a = dy
                    p_a = py
                else:
                    d_a = dz
                    p_a = pz
                if -1e-15 < d_a < 1e-15:
                    continue
                t = (coord[s] - p_a) / d_a
                if t <= eps or t >= t_hit:
                    continue
                if a == 0:
                    hu = py + t * dy
                    hv = pz + t * dz
                elif a == 1:
                    hu = px + t * dx
                    hv = pz + t * dz
                else:
                    hu = px + t * dx
                    hv = py + t * dy
                if (bounds[s, 0] - 1e-9 <= hu <= bounds[s, 1] + 1e-9 and
                        bounds[s, 2] - 1e-9 <= hv <= bounds[s, 3] + 1e-9):
                    t_hit = t
                    hit = s

            seg_end = t_hit if hit >= 0 else max_dist - dist

            # receiver sphere crossing within this segment
            if diffused or spec_count > exclude_order:
                ocx = px - rcv[0]
                ocy = py - rcv[1]
                ocz = pz - rcv[2]
                b = ocx * dx + ocy * dy + ocz * dz
                c2 = ocx * ocx + ocy * ocy + ocz * ocz - radius * radius
                disc = b * b - c2
                if disc > 0.0:
                    sq = np.sqrt(disc)
                    lo = -b - sq
                    hi = -b + sq
                    if lo < 0.0:
                        lo = 0.0
                    if hi > seg_end:
                        hi = seg_end
                    if hi > lo:
                        smid = 0.5 * (lo + hi)
                        t_arr = (dist + smid) / c_sound
                        if t_arr < cutoff_s:
                            bin_i = int(t_arr / bin_s)
                            if bin_i < n_bins:
                                f = (hi - lo) / vol_sphere
                                for bnd in range(n_bands):
                                    hist[bnd, bin_i] += (
                                        w[bnd] * np.exp(-air_m[bnd] * (dist + smid)) * f)

            if hit < 0:
                # escaped through a numerical crack; account and drop
                for bnd in range(n_bands):
                    leaked[bnd] += w[bnd] * np.exp(-air_m[bnd] * dist)
                break

            if dist + t_hit >= max_dist:
                for bnd in range(n_bands):
                    inflight[bnd] += w[bnd] * np.exp(-air_m[bnd] * max_dist)
                break

            px += t_hit * dx
            py += t_hit * dy
            pz += t_hit * dz
            dist += t_hit

            wmax = 0.0
            for bnd in range(n_bands):
                w[bnd] *= 1.0 - alpha[hit, bnd]
                val = w[bnd] * np.exp(-air_m[bnd] * dist)
                if val > wmax:
                    wmax = val
            if wmax < kill:
                break

            a = ax[hit]
            if a == 0:
                d_a = dx
            elif a == 1:
                d_a = dy
            else:
                d_a = dz
            # hemisphere opposing the incident direction, robust to
            # back-face hits at grazing edges
            n_dir = nsign[hit] if nsign[hit] * d_a < 0.0 else -nsign[hit]

            state, z = _rng_next(state)
            u = _to_unit(z)
            if u < scat_mean[hit]:
                diffused = True
                state, z = _rng_next(state)
                r1 = _to_unit(z)
                state, z = _rng_next(state)
                r2 = _to_unit(z)
                ctd = np.sqrt(r1)
                std = np.sqrt(1.0 - r1)
                phid = 2.0 * np.pi * r2
                cu = std * np.cos(phid)
                cv = std * np.sin(phid)
                if a == 0:
                    dx = n_dir * ctd
                    dy = cu
                    dz = cv
                elif a == 1:
                    dx = cu
                    dy = n_dir * ctd
                    dz = cv
                else:
                    dx = cu
                    dy = cv
                    dz = n_dir * ctd
            else:
                if not diffused:
                    spec_count += 1
                if a == 0:
                    dx = -dx
                elif a == 1:
                    dy = -dy
                else:
                    dz = -dz

    return hist, inflight, leaked


def ray_trace(ax, coord, bounds, nsign, alpha, scat_mean, src, rcv, radius,
              n_rays, c_sound, air_m, cutoff_s, bin_s, n_bins, seed,
              exclude_order):
    """Backend-dispatching wrapper around the traced kernel."""
    with np.errstate(over="ignore"):
        return _ray_trace_kernel(
            ax, coord, bounds, nsign, alpha, scat_mean, src, rcv, radius,
            n_rays, c_sound, air_m, cutoff_s, bin_s, n_bins,
            int(seed) & 0xFFFFFFFFFFFFFFFF, exclude_order)
