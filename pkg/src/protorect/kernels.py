"""Backend selection for the hot kernels.

The compiled Cython module is used when it imports; otherwise, or when
``PROTORECT_PURE_PYTHON=1`` is set, the numpy fallback is used. ``compiled``
stays importable either way so the two can be compared. Both expose
``cosine_matrix``, ``softmax_rows``, ``select_topz``, ``rectify_prototypes``
and ``mc_trial_cosines``.
"""

import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

try:
    from . import _kernels as compiled
except ImportError as exc:  # extension not built
    logger.debug("compiled kernels unavailable: %s", exc)
    compiled = None

PURE_PYTHON = os.environ.get("PROTORECT_PURE_PYTHON", "").lower() in ("1", "true", "yes")
fallback = _fallback
active = compiled if compiled is not None and not PURE_PYTHON else _fallback
BACKEND = active.BACKEND

cosine_matrix = active.cosine_matrix
softmax_rows = active.softmax_rows
select_topz = active.select_topz
rectify_prototypes = active.rectify_prototypes
mc_trial_cosines = active.mc_trial_cosines
