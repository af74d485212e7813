"""Hot kernels: the compiled extension when available, numpy otherwise.

Set ``STOCHQBM_PURE_PYTHON=1`` to force the fallback.  ``BACKEND`` names the
implementation in use.
"""

import os

from . import _fallback

if os.environ.get("STOCHQBM_PURE_PYTHON", "") not in ("", "0"):
    _core = None
else:
    try:
        from . import _core
    except ImportError:  # extension not built
        _core = None

if _core is not None:
    volterra_verlet = _core.volterra_verlet
    fp_rhs = _core.fp_rhs
    BACKEND = "compiled"
else:
    volterra_verlet = _fallback.volterra_verlet
    fp_rhs = _fallback.fp_rhs
    BACKEND = "python"

__all__ = ["volterra_verlet", "fp_rhs", "BACKEND"]
