"""Inner-loop kernels: compiled extension when built, numpy fallback otherwise.

``BACKEND`` names the active implementation. :func:`use_backend` switches at
runtime, which the tests and the benchmark use to compare both.
"""
import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

BACKEND = "compiled" if _ckernels is not None else "python"
_active = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name: str) -> str:
    """Activate a backend by name; returns the previously active one."""
    global BACKEND, _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous = BACKEND
    BACKEND, _active = name, _BACKENDS[name]
    return previous


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def zbuffer(u, v, z, height, width):
    """Per-pixel minimum of ``z`` over points landing on integer pixel ``(u, v)``."""
    return _active.zbuffer(_i64(u), _i64(v), _f64(z), int(height), int(width))


def raster_log(simplices, px, py, logd, height, width):
    """Barycentric interpolation of log-depth over triangles, exponentiated.

    Pixels on a shared edge take the value of the first triangle covering them.
    """
    simplices = _i64(simplices).reshape(-1, 3)
    return _active.raster_log(simplices, _f64(px), _f64(py), _f64(logd), int(height), int(width))


def assemble_argmax(windows, conf, offsets, depths, tau, height, width):
    """Max-confidence depth assignment; earlier patches win ties."""
    windows = _i64(windows).reshape(-1, 4)
    return _active.assemble_argmax(
        windows, _f64(conf), _i64(offsets), _f64(depths), float(tau), int(height), int(width)
    )
