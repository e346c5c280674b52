"""Transform kernel selection: compiled extension with a numpy fallback.

The active backend is chosen once at import time. PRIVSEQ_BACKEND
overrides the default: "compiled" demands the extension (import error
if missing), "python" forces the fallback, "auto" (default) prefers the
extension when present. Both kernels are bit-compatible, so selection
never changes numerical results, only speed.
"""
from __future__ import annotations

import os
from typing import Callable

from privseq.core import ConfigurationError

ENV_VAR = "PRIVSEQ_BACKEND"


def _select() -> tuple[str, Callable]:
    choice = os.environ.get(ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "compiled", "python"):
        raise ConfigurationError(
            f"{ENV_VAR} must be one of auto, compiled, python; got {choice!r}"
        )
    if choice in ("auto", "compiled"):
        try:
            from privseq import _kernels

            return "compiled", _kernels.fft_pow2_batch
        except ImportError:
            if choice == "compiled":
                raise ConfigurationError(
                    "compiled kernel requested via "
                    f"{ENV_VAR}=compiled but the extension is not built"
                ) from None
    from privseq import _kernels_py

    return "python", _kernels_py.fft_pow2_batch


BACKEND_NAME, fft_pow2_batch = _select()


def active_backend() -> str:
    """Name of the kernel backend selected at import: compiled or python."""
    return BACKEND_NAME
