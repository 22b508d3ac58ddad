"""Compare the compiled and pure-Python kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N]

Part one times each kernel directly from both modules.  Part two runs two
end-to-end workloads (all security vectors of the bundled model, and a
codec round trip) in subprocesses with and without ``FGFUZZ_PURE_PYTHON``.
"""

import argparse
import os
import random
import subprocess
import sys
import timeit

from fgfuzz import _kernels_py

try:
    from fgfuzz import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _cover_inputs(rng, n_leaves=14, internal=10):
    reqs = []
    for j in range(internal):
        avail = n_leaves + j
        mask = 0
        for _ in range(rng.randint(1, 3)):
            mask |= 1 << rng.randrange(avail)
        reqs.append(mask)
    return n_leaves, reqs, n_leaves + internal - 1


def _pack_inputs(rng):
    widths = [3, 32, 4, 4, 64, 40, 4, 1, 128, 8]
    return [rng.getrandbits(w) for w in widths], widths


def bench_module(mod, repeat):
    rng = random.Random(0)
    covers = [_cover_inputs(rng) for _ in range(20)]
    packs = [_pack_inputs(rng) for _ in range(200)]
    packed = [(mod.pack_fields(v, w), w) for v, w in packs]
    out = {}
    out["min_cover"] = min(timeit.repeat(lambda: [mod.min_cover(*c) for c in covers], number=1, repeat=repeat))
    out["pack_fields"] = min(timeit.repeat(lambda: [mod.pack_fields(v, w) for v, w in packs], number=20, repeat=repeat))
    out["unpack_fields"] = min(timeit.repeat(lambda: [mod.unpack_fields(b, w) for b, w in packed], number=20, repeat=repeat))
    return out


WORKLOAD = r"""
import random, time
from fgfuzz import kernels, load_bundled
from fgfuzz.depgraph import all_vectors, build_graph
from fgfuzz.sim.codec import Codec
m = load_bundled()
t = time.perf_counter()
for _ in range(20):
    all_vectors(build_graph(m))
vec = time.perf_counter() - t
codec = Codec(m)
rng = random.Random(1)
t = time.perf_counter()
for c in m.commands:
    for _ in range(2000):
        codec.decode(rng.getrandbits(c.length), c.name)
dec = time.perf_counter() - t
print(kernels.BACKEND, vec, dec)
"""


def bench_end_to_end():
    rows = []
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("FGFUZZ_PURE_PYTHON", None)
        if pure:
            env["FGFUZZ_PURE_PYTHON"] = "1"
        out = subprocess.run([sys.executable, "-c", WORKLOAD], env=env, capture_output=True, text=True, check=True).stdout.split()
        rows.append((out[0], float(out[1]), float(out[2])))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    mods = [("python", _kernels_py)]
    if _compiled is not None:
        mods.insert(0, ("cython", _compiled))
    else:
        print("compiled extension not built; timing the Python backend only")
    results = {name: bench_module(mod, args.repeat) for name, mod in mods}
    print(f"{'kernel':<16}" + "".join(f"{n:>12}" for n, _ in mods) + ("     speedup" if len(mods) == 2 else ""))
    for k in results["python"]:
        row = f"{k:<16}" + "".join(f"{results[n][k] * 1e3:>10.2f}ms" for n, _ in mods)
        if len(mods) == 2:
            row += f"{results['python'][k] / results['cython'][k]:>11.1f}x"
        print(row)
    print()
    print(f"{'backend':<16}{'vectors x20':>14}{'decode 30k':>14}")
    for backend, vec, dec in bench_end_to_end():
        print(f"{backend:<16}{vec * 1e3:>12.1f}ms{dec * 1e3:>12.1f}ms")


if __name__ == "__main__":
    main()
