"""Numeric kernels for the per-bin hot loops.

Two interchangeable backends:

  * ``_native`` — Cython extension, built at install time.
  * ``_py`` — pure numpy/scipy fallback.

The native backend is preferred when importable; set the environment
variable ``FACSEP_PURE_PYTHON=1`` to force the fallback (used by the
benchmark and the cross-backend agreement tests).
"""

import os
import warnings

from . import _py

if os.environ.get("FACSEP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _py
else:
    try:
        from . import _native as _impl
    except ImportError:
        warnings.warn(
            "facsep native kernels not built; falling back to the numpy "
            "implementation (slower, identical results to a few ulps)."
        )
        _impl = _py


def backend():
    """Name of the active backend: 'native' or 'python'."""
    return "native" if _impl.__name__.endswith("_native") else "python"


log_ndtr = _impl.log_ndtr
lifted_max_logpdf = _impl.lifted_max_logpdf
cacg_quadratic = _impl.cacg_quadratic
cacg_scatter = _impl.cacg_scatter
