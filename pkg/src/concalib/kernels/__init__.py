"""Convolution kernel backend selection.

The compiled extension (`_native`, Cython) is preferred when importable;
otherwise the pure-numpy `reference` backend is used. Set CONCALIB_KERNELS
to "native" or "reference" to force one at import (forcing "native" raises
if the extension was never built), or call use_backend() to switch at
runtime. Both produce identical results up to float rounding; see
benchmarks/bench_kernels.py for which is faster at a given shape.

Both backends implement:
    conv2d_forward(x, w, stride, padding)            -> (B,Cout,Ho,Wo)
    conv2d_grad_input(grad, w, H, W, stride, padding) -> (B,Cin,H,W)
    conv2d_grad_weight(grad, x, kh, kw, stride, padding) -> (Cout,Cin,kh,kw)

Arrays must be C-contiguous float32 or float64; both operands of one call
must share a dtype.
"""

import os

from . import reference

try:
    from . import _native
except ImportError:
    _native = None

backend_name = ""
conv2d_forward = None
conv2d_grad_input = None
conv2d_grad_weight = None


def use_backend(name: str):
    """Select the kernel implementation by name for all subsequent calls."""
    global backend_name, conv2d_forward, conv2d_grad_input, conv2d_grad_weight
    if name == "native":
        if _native is None:
            raise ImportError("compiled kernel extension is not built")
        impl = _native
    elif name == "reference":
        impl = reference
    else:
        raise ValueError(f"kernel backend must be 'native' or 'reference', got {name!r}")
    backend_name = name
    conv2d_forward = impl.conv2d_forward
    conv2d_grad_input = impl.conv2d_grad_input
    conv2d_grad_weight = impl.conv2d_grad_weight


_forced = os.environ.get("CONCALIB_KERNELS", "").strip().lower()
if _forced == "":
    use_backend("native" if _native is not None else "reference")
else:
    use_backend(_forced)
