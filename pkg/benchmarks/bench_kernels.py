"""Time the hot kernels under both backends and check that their outputs agree.

Each backend runs in its own subprocess because the choice is fixed at import
time by ``MULTICENTER_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, time
import numpy as np
from multicenter import numerics, _accel
from multicenter.numerics import RngStream, gemm, softmax_xent

def timed(fn, repeats):
    fn()  # warm-up (and numba compile)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out

def digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]

repeats = REPEATS
rng = np.random.default_rng(0)
a, b = rng.normal(size=(128, 16)), rng.normal(size=(16, 12))
big_a, big_b = rng.normal(size=(256, 256)), rng.normal(size=(256, 256))
z = rng.normal(size=(128, 12)) * 5
t = rng.dirichlet(np.ones(12), size=128)
cases = {
    "philox 1e5 blocks": lambda: numerics.philox4x32(7, 3, 0, 100_000),
    "normal 1e5": lambda: RngStream(7, 3).standard_normal(100_000),
    "gemm 128x16 @ 16x12": lambda: gemm(a, b),
    "gemm 256x256 @ 256x256": lambda: gemm(big_a, big_b),
    "softmax_xent 128x12": lambda: softmax_xent(z, t),
}
out = {"backend": _accel.backend()}
for name, fn in cases.items():
    best, res = timed(fn, repeats)
    res = res if isinstance(res, tuple) else (res,)
    out[name] = {"seconds": best, "digest": digest(*res)}
print(json.dumps(out))
"""


def run_backend(flag, repeats):
    env = dict(os.environ, MULTICENTER_NUMBA=flag)
    code = WORKER.replace("REPEATS", str(repeats))
    proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    fast = run_backend("1", args.repeats)
    slow = run_backend("0", args.repeats)
    print(f"backends: {fast['backend']} vs {slow['backend']}")
    print(f"{'kernel':26s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  bits")
    mismatches = 0
    for name in fast:
        if name == "backend":
            continue
        f, s = fast[name], slow[name]
        same = f["digest"] == s["digest"]
        mismatches += not same
        print(f"{name:26s} {1e3 * f['seconds']:10.3f} {1e3 * s['seconds']:10.3f} "
              f"{s['seconds'] / f['seconds']:7.1f}x  {'same' if same else 'DIFFER'}")
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
