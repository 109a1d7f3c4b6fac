"""Kernel backend selection.

Prefers the compiled `_speedups` extension and falls back to the pure-Python
twin when the extension is missing or `AGORASIM_PURE_PYTHON=1` is set. Both
backends are bit-compatible, so the choice never changes simulation output.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("AGORASIM_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND

time_fraction = _impl.time_fraction
offer_value = _impl.offer_value
issue_score = _impl.issue_score
weighted_utility = _impl.weighted_utility
concession_ratio = _impl.concession_ratio
piecewise_level = _impl.piecewise_level
threshold_crossing = _impl.threshold_crossing
