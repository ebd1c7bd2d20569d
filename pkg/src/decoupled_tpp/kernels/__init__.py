"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The fused Cython extension is preferred when it imports cleanly; otherwise the
numpy implementation takes over transparently. ``DECOUPLED_TPP_KERNELS`` can
force a choice: ``python``, ``compiled``, or ``auto`` (default).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import _pure

_COMPILED = None
_IMPORT_ERROR: Exception | None = None
try:
    from . import _fused as _compiled_mod

    _COMPILED = _compiled_mod
except ImportError as exc:  # pragma: no cover - depends on build environment
    _IMPORT_ERROR = exc

_FORCE = os.environ.get("DECOUPLED_TPP_KERNELS", "auto").lower()
if _FORCE == "python":
    _active = _pure
elif _FORCE == "compiled":
    if _COMPILED is None:
        raise ImportError(
            f"DECOUPLED_TPP_KERNELS=compiled but the extension is unavailable: {_IMPORT_ERROR}"
        )
    _active = _COMPILED
else:
    _active = _COMPILED if _COMPILED is not None else _pure


def backend_name() -> str:
    """Name of the backend currently in use ('python' or 'compiled')."""
    return _active.NAME


def available_backends() -> list[str]:
    names = ["python"]
    if _COMPILED is not None:
        names.append("compiled")
    return names


def get_backend(name: str):
    if name == "python":
        return _pure
    if name == "compiled":
        if _COMPILED is None:
            raise ValueError(f"compiled kernels unavailable: {_IMPORT_ERROR}")
        return _COMPILED
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name: str) -> None:
    """Switch the active backend (used by the kernel benchmark and tests)."""
    global _active
    _active = get_backend(name)


@contextmanager
def backend(name: str):
    previous = _active.NAME
    use_backend(name)
    try:
        yield
    finally:
        use_backend(previous)


def softplus(x):
    return _active.softplus(x)


def softplus_grad(x, grad_out):
    return _active.softplus_grad(x, grad_out)


def mlp_forward(x, weights, biases, activation="tanh"):
    return _active.mlp_forward(x, weights, biases, activation)


def mlp_backward(grad_out, acts, weights, activation="tanh"):
    return _active.mlp_backward(grad_out, acts, weights, activation)
