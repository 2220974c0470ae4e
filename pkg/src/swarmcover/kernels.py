"""Backend selection for the hot per-step kernels.

The compiled extension is used when it imports; set ``SWARMCOVER_PURE=1`` to
force the numpy fallback.
"""
import os

from swarmcover import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SWARMCOVER_PURE", "") not in ("1", "true", "yes"):
    try:
        from swarmcover import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

project_points = _impl.project_points
boundary_directions = _impl.boundary_directions
individual_potentials = _impl.individual_potentials
classical_accels = _impl.classical_accels
coincident_direction = _impl.coincident_direction
lstm_step_forward = _impl.lstm_step_forward
lstm_step_backward = _impl.lstm_step_backward


def available_backends():
    """Map backend name to module for every backend that can be imported."""
    out = {"python": _kernels_py}
    try:
        from swarmcover import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
