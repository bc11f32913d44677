"""Kernel backend selection: compiled extension if available, numpy fallback.

Set SOCIOSPEC_PURE_PYTHON=1 to force the fallback (used by the parity
tests and the benchmark).
"""

import os

from . import _kernels_py

if os.environ.get("SOCIOSPEC_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
pairwise_sq_dists = _impl.pairwise_sq_dists
affinity_search = _impl.affinity_search
tsne_gradient = _impl.tsne_gradient
