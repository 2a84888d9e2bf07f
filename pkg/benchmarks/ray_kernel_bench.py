"""Compare the compiled ray kernel against the pure-numpy fallback.

Run as: python3 benchmarks/ray_kernel_bench.py [--rays N]
The backend is fixed per process (import-time choice), so this script
re-executes itself with ROOMSOUND_NUMBA=0 for the fallback half and
checks both backends produce bit-identical histograms.
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_once(rays, repeat):
    import numpy as np

    from roomsound import _kernels
    from roomsound.engine import SimulationParams, ray_trace_late
    from roomsound.rooms import build_empty_box

    geo = build_empty_box(6.0, 7.0, 3.5, 0.3, scattering=0.5)
    params = SimulationParams(ray_count=rays, rng_seed=11,
                              air_absorption=False)
    ray_trace_late(geo, params)  # warm the JIT before timing
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        hist, _, _ = ray_trace_late(geo, params)
        best = min(best, time.perf_counter() - t0)
    return {"backend": "numba" if _kernels.NUMBA_ENABLED else "numpy",
            "rays": rays, "seconds": best,
            "rays_per_s": rays / best,
            "checksum": float(np.sum(hist))}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--emit-json", action="store_true",
                    help="print one result record (used by the re-exec)")
    args = ap.parse_args()

    if args.emit_json:
        print(json.dumps(run_once(args.rays, args.repeat)))
        return

    results = []
    for numba_flag in ("1", "0"):
        env = dict(os.environ, ROOMSOUND_NUMBA=numba_flag)
        out = subprocess.run(
            [sys.executable, __file__, "--rays", str(args.rays),
             "--repeat", str(args.repeat), "--emit-json"],
            env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))

    for r in results:
        print(f"{r['backend']:>6}: {r['seconds']*1000:8.1f} ms "
              f"({r['rays_per_s']:,.0f} rays/s)")
    fast, slow = results
    print(f"speedup: {slow['seconds'] / fast['seconds']:.1f}x")
    if fast["checksum"] != slow["checksum"]:
        print("WARNING: backends disagree bit-for-bit "
              f"({fast['checksum']!r} vs {slow['checksum']!r})")
        sys.exit(1)
    print("backends agree bit-for-bit")


if __name__ == "__main__":
    main()
