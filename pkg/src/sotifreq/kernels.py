"""Backend selection for the numerical kernels.

The compiled extension ``sotifreq._ckernels`` is used when it imports;
otherwise the pure-Python module is used. Set ``SOTIFREQ_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

_py = _pykernels
try:
    from . import _ckernels as _c
except ImportError:
    _c = None

if _c is not None and os.environ.get("SOTIFREQ_PURE_PYTHON") != "1":
    _impl = _c
    BACKEND = "cython"
else:
    _impl = _py
    BACKEND = "python"

NO_COLLISION = _pykernels.NO_COLLISION
PHASE_FRONT_STOPPED = _pykernels.PHASE_FRONT_STOPPED
PHASE_MUTUAL_BRAKING = _pykernels.PHASE_MUTUAL_BRAKING
PHASE_REACTION = _pykernels.PHASE_REACTION

delta_v_sim = _impl.delta_v_sim
rss_min_distance = _impl.rss_min_distance
rss_follow_sim = _impl.rss_follow_sim
iou_matrix_2d = _impl.iou_matrix_2d
iou_matrix_3d = _impl.iou_matrix_3d
greedy_match = _impl.greedy_match


def backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _py}
    if _c is not None:
        out["cython"] = _c
    return out
