"""Hot kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``RTDNN_NO_NUMBA`` is unset
(or ``0``). Set ``RTDNN_NO_NUMBA=1`` to force the numpy implementations.
Both backends are importable explicitly via :func:`get_backend`.
"""

import importlib
import os

_NAMES = (
    "levinson", "cosine_roots", "allpole", "harmonic_excitation",
    "net_forward", "net_backward", "net_train_epoch", "net_run",
)


def _numba_wanted():
    return os.environ.get("RTDNN_NO_NUMBA", "0").strip().lower() in ("", "0", "false", "no")


def get_backend(name: str):
    """Return the kernel module for ``"numba"`` or ``"numpy"``."""
    if name == "numba":
        return importlib.import_module("._numba", __name__)
    if name == "numpy":
        return importlib.import_module("._numpy", __name__)
    raise ValueError(f"unknown backend {name!r}")


def _select():
    if _numba_wanted():
        try:
            return "numba", get_backend("numba")
        except ImportError:
            pass
    return "numpy", get_backend("numpy")


BACKEND, _impl = _select()

levinson = _impl.levinson
cosine_roots = _impl.cosine_roots
allpole = _impl.allpole
harmonic_excitation = _impl.harmonic_excitation
net_forward = _impl.net_forward
net_backward = _impl.net_backward
net_train_epoch = _impl.net_train_epoch
net_run = _impl.net_run

__all__ = ["BACKEND", "get_backend", *_NAMES]
