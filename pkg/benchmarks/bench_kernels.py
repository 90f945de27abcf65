"""Benchmark the compiled convolution kernels against the numpy reference.

Runs forward, grad-input, and grad-weight for a few shapes drawn from the
training configuration and prints per-call times plus the speed ratio.
Requires the compiled extension; build the package first.
"""

import argparse
import time

import numpy as np

from concalib.kernels import reference

try:
    from concalib.kernels import _native as native
except ImportError:
    native = None

# (label, B, Cin, H, W, Cout, kernel, stride, padding)
SHAPES = [
    ("map encoder 64x32", 4, 7, 32, 64, 16, 3, 2, 1),
    ("map decoder 64x32", 4, 16, 32, 64, 16, 3, 1, 1),
    ("pose residual 32x16", 4, 16, 16, 32, 16, 3, 1, 1),
    ("single row 1x64", 1, 4, 1, 64, 8, 3, 1, 1),
    ("deep narrow 8x8", 2, 32, 8, 8, 32, 3, 1, 1),
]


def time_call(fn, *args, repeats: int, warmup: int = 2) -> float:
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_shape(label, b, cin, h, w, cout, k, stride, pad, repeats, dtype):
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.normal(size=(b, cin, h, w)), dtype=dtype)
    wt = np.ascontiguousarray(rng.normal(size=(cout, cin, k, k)), dtype=dtype)
    out = reference.conv2d_forward(x, wt, stride, pad)
    grad = np.ascontiguousarray(rng.normal(size=out.shape), dtype=dtype)

    calls = [
        ("forward", lambda m: m.conv2d_forward(x, wt, stride, pad)),
        ("grad_input", lambda m: m.conv2d_grad_input(grad, wt, h, w, stride, pad)),
        ("grad_weight", lambda m: m.conv2d_grad_weight(grad, x, k, k, stride, pad)),
    ]
    for name, call in calls:
        ref_t = time_call(call, reference, repeats=repeats)
        if native is None:
            print(f"{label:22s} {name:12s} reference {ref_t*1e3:8.3f} ms   "
                  f"native: not built")
            continue
        nat_t = time_call(call, native, repeats=repeats)
        a, bb = call(reference), call(native)
        exact = "exact" if np.array_equal(a, bb) else f"max diff {np.max(np.abs(a - bb)):.2e}"
        print(f"{label:22s} {name:12s} reference {ref_t*1e3:8.3f} ms   "
              f"native {nat_t*1e3:8.3f} ms   ratio {ref_t/nat_t:5.2f}x   [{exact}]")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20,
                        help="timed iterations per kernel (default 20)")
    parser.add_argument("--dtype", choices=("float32", "float64"),
                        default="float32")
    args = parser.parse_args()
    dtype = np.dtype(args.dtype)
    print(f"dtype {dtype.name}, {args.repeats} repeats; "
          f"ratio > 1 means the compiled kernel is faster\n")
    for shape in SHAPES:
        bench_shape(*shape, repeats=args.repeats, dtype=dtype)
        print()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
