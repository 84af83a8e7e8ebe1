"""Compare the compiled and pure-numpy kernel backends.

Times the packing and elementwise primitives at desk-model shapes, then a
full codec encode/decode pass per backend (run in a subprocess so the
import-time CODECSEP_KERNELS selection is exercised for real).

The elementwise rows time the compiled scalar loops in _core directly; the
selected cython backend does not use them because numpy's vectorized
transcendentals win, which these numbers document.

    python3 benchmarks/bench_kernels.py [--repeats N] [--skip-e2e]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from codecsep.numerics.backend import get_backend  # noqa: E402

# (label, B, C, Tp, K, stride): padded shapes the desk codec actually runs
CONV_SHAPES = [
    ("entry k7", 4, 1, 16006, 7, 1),
    ("resunit k5", 4, 32, 8004, 5, 1),
    ("down k8 s4", 4, 64, 4004, 8, 4),
    ("exit k3", 4, 64, 252, 3, 1),
]

EW_SHAPES = [
    ("snake", 4, 64, 4000),
    ("sigmoid", 4, 64, 250),
]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_primitives(repeats):
    rows = []
    for label, B, C, Tp, K, stride in CONV_SHAPES:
        xp = np.random.default_rng(0).standard_normal(
            (B, C, Tp), dtype=np.float32)
        cols = get_backend("numpy").im2col(xp, K, stride)
        per = {}
        for name in ("numpy", "cython"):
            bk = get_backend(name)
            per[name] = (best_of(lambda: bk.im2col(xp, K, stride), repeats),
                         best_of(lambda: bk.col2im(cols, stride, Tp), repeats))
        rows.append((f"im2col {label}", per["numpy"][0], per["cython"][0]))
        rows.append((f"col2im {label}", per["numpy"][1], per["cython"][1]))
    from codecsep.numerics import _core
    py = get_backend("numpy")
    for label, B, C, T in EW_SHAPES:
        x = np.random.default_rng(1).standard_normal((B, C, T),
                                                     dtype=np.float32)
        y = py.sigmoid_fwd(x) if label == "sigmoid" else x
        for op in (f"{label}_fwd", f"{label}_bwd"):
            per = {}
            for impl_name, impl in (("numpy", py), ("cython", _core)):
                fn = getattr(impl, op)
                if op.endswith("fwd"):
                    per[impl_name] = best_of(lambda: fn(x), repeats)
                else:
                    per[impl_name] = best_of(lambda: fn(y, x), repeats)
            rows.append((op + " *", per["numpy"], per["cython"]))
    return rows


E2E_SNIPPET = """
import time
import numpy as np
from codecsep import codec
from codecsep.numerics import ParameterStore, backend
from codecsep.numerics import tensor as tt

assert backend.name == %r
ccfg = codec.CodecConfig()
ps = ParameterStore()
codec.build_codec(ps, ccfg, np.random.default_rng(0))
x = tt.tensor(np.random.default_rng(1).standard_normal(
    (4, 1, 16000)).astype(np.float32))
codec.decode(ps, ccfg, codec.encode(ps, ccfg, x))  # warm up
times = []
for _ in range(3):
    t0 = time.perf_counter()
    z = codec.encode(ps, ccfg, x)
    y = codec.decode(ps, ccfg, z)
    times.append(time.perf_counter() - t0)
print(min(times))
"""


def bench_e2e():
    out = {}
    for name in ("numpy", "cython"):
        env = dict(os.environ, CODECSEP_KERNELS=name,
                   PYTHONPATH=os.pathsep.join(
                       [os.path.join(os.path.dirname(__file__), "..", "src"),
                        os.environ.get("PYTHONPATH", "")]))
        r = subprocess.run([sys.executable, "-c", E2E_SNIPPET % name],
                           capture_output=True, text=True, env=env)
        if r.returncode != 0:
            raise RuntimeError(f"{name} e2e run failed:\n{r.stderr}")
        out[name] = float(r.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)

    rows = bench_primitives(args.repeats)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy ms':>9}  {'cython ms':>9}  speedup")
    for label, tn, tc in rows:
        print(f"{label:<{width}}  {tn * 1e3:9.3f}  {tc * 1e3:9.3f}  "
              f"{tn / tc:6.2f}x")
    print("* compiled loop measured directly; selection keeps numpy here")

    if not args.skip_e2e:
        e2e = bench_e2e()
        print()
        print("codec encode+decode, batch 4 x 2 s @ 8 kHz (import-time "
              "selection via CODECSEP_KERNELS):")
        print(f"  numpy  {e2e['numpy'] * 1e3:9.1f} ms")
        print(f"  cython {e2e['cython'] * 1e3:9.1f} ms  "
              f"({e2e['numpy'] / e2e['cython']:.2f}x)")


if __name__ == "__main__":
    main()
