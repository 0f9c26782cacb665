"""Thresholding kernels, compiled when available.

The Cython extension ``matgpca._kernels`` is used if it was built; otherwise the
numpy implementations in ``matgpca._kernels_py`` are used.  Set
``MATGPCA_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MATGPCA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

soft_threshold = _impl.soft_threshold
cv_grid_objective = _impl.cv_grid_objective
diagonal_cap = _impl.diagonal_cap

__all__ = ["BACKEND", "soft_threshold", "cv_grid_objective", "diagonal_cap"]
