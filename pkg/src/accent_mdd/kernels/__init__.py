"""Hot inner loops: CTC lattice recursions and edit-distance alignment.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy/pure-Python versions in ``_pykernels`` are used.  Set
``AMDD_PURE_PYTHON=1`` to force the fallback.  ``BACKEND`` names the choice.
"""
import os

from . import _pykernels as python

MATCH, SUB, DEL, INS = python.MATCH, python.SUB, python.DEL, python.INS

compiled = None
if os.environ.get("AMDD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

ctc_min_frames = python.ctc_min_frames
ctc_alpha = _impl.ctc_alpha
ctc_beta = _impl.ctc_beta
ctc_nll_grad = _impl.ctc_nll_grad
edit_align = _impl.edit_align

__all__ = [
    "BACKEND",
    "ctc_min_frames",
    "ctc_alpha",
    "ctc_beta",
    "ctc_nll_grad",
    "edit_align",
    "python",
    "compiled",
    "MATCH",
    "SUB",
    "DEL",
    "INS",
]
