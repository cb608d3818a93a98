"""Compare the compiled kernels with the numpy fallback.

Times both propagation kernels on random layouts of increasing size, then
one full demo simulation under each backend (the backend is chosen at
import, so the simulations run in subprocesses).

    python3 benchmarks/bench_kernels.py [--repeat N] [--sizes 50,200,1000]
"""
import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from spectrumchain import _fallback

try:
    from spectrumchain import _kernels
except ImportError:
    _kernels = None

MODEL = (40.0, 1.0, 3.5, 1.0)
ROOT = Path(__file__).resolve().parent.parent


def layout(n, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = rng.uniform(0, 2000, n), rng.uniform(0, 2000, n)
    ps = rng.uniform(10, 30, n)
    ch = rng.integers(0, 3, n).astype(np.int64)
    own = np.arange(n, dtype=np.int64)
    return xs, ys, ps, ch, own


def time_call(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def bench_kernels(sizes, repeat):
    print(f"{'kernel':<18}{'n':>6}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for n in sizes:
        xs, ys, ps, ch, own = layout(n)
        cases = {
            "pairwise_rx_dbm": (xs, ys, ps, xs, ys) + MODEL,
            "aggregate_mw": (xs, ys, ps, ch, own, xs, ys, ch, own) + MODEL,
        }
        for name, args in cases.items():
            slow = time_call(getattr(_fallback, name), args, repeat)
            if _kernels is None:
                print(f"{name:<18}{n:>6}{slow * 1e3:>12.3f}{'-':>12}{'-':>10}")
                continue
            fast = time_call(getattr(_kernels, name), args, repeat)
            assert np.allclose(getattr(_fallback, name)(*args), getattr(_kernels, name)(*args),
                               rtol=1e-12, atol=0.0)
            print(f"{name:<18}{n:>6}{slow * 1e3:>12.3f}{fast * 1e3:>12.3f}{slow / fast:>10.1f}")


SIM = """
import time
from spectrumchain import BACKEND
from spectrumchain.runner import simulate
from spectrumchain.scenario import load_scenario
sc = load_scenario({path!r})
t = time.perf_counter()
simulate(sc, "zone")
print(BACKEND, time.perf_counter() - t)
"""


def bench_simulation():
    code = SIM.format(path=str(ROOT / "scenarios" / "demo.yaml"))
    for pure in ("0", "1"):
        env = dict(os.environ, SPECTRUMCHAIN_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"demo simulation ({out[0]}): {float(out[1]):.3f} s")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", default="50,200,1000")
    ns = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; timing the fallback only")
    bench_kernels([int(s) for s in ns.sizes.split(",")], ns.repeat)
    bench_simulation()


if __name__ == "__main__":
    main()
