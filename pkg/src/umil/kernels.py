"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``UMIL_KERNELS=python`` to force the fallback.  Results of the two
backends agree to rounding; a single run is bitwise reproducible on either.
"""
import os

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("UMIL_KERNELS", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def backend(name: str):
    """Return the kernel module called ``name`` ("python" or "cython")."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


cosine_pair_labels = _impl.cosine_pair_labels
pair_prob_loss_grad = _impl.pair_prob_loss_grad
pair_simplex_loss_grad = _impl.pair_simplex_loss_grad
roc_sweep = _impl.roc_sweep
ring_variance = _impl.ring_variance
segment_bounds = _impl.segment_bounds
segment_means = _impl.segment_means
