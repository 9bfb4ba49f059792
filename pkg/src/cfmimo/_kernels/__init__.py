"""Sequence kernels: compiled extension plus pure-numpy fallback.

``get_backend("auto")`` prefers the compiled kernel when the extension was
built and falls back to numpy otherwise; the CFMIMO_BACKEND environment
variable ("pure" or "compiled") overrides the choice for benchmarking and
debugging. Both backends expose identical ``lstm_forward``/``lstm_backward``
entry points and agree to floating-point noise.
"""

import os

from . import _ref

try:
    from . import _fast
except ImportError:  # extension not built; numpy fallback
    _fast = None


def available_backends():
    names = ["pure"]
    if _fast is not None:
        names.append("compiled")
    return names


def get_backend(name: str = "auto"):
    if name == "auto":
        name = os.environ.get("CFMIMO_BACKEND", "auto")
    if name == "auto":
        return _fast if _fast is not None else _ref
    if name == "pure":
        return _ref
    if name == "compiled":
        if _fast is None:
            raise RuntimeError("compiled kernel not built; reinstall with a C toolchain")
        return _fast
    raise ValueError(f"unknown backend {name!r}")
