"""Backend selection for the hot kernels.

The compiled extension ``dcrl._ckernels`` is used when it was built and
``DCRL_PURE_PYTHON`` is not set; otherwise the numpy versions in
``dcrl._pykernels`` are used. Both expose the same four functions.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

_impl = _pykernels
BACKEND = "python"

if not os.environ.get("DCRL_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")

knn_select = _impl.knn_select
rank_matrix = _impl.rank_matrix
lis_loss_grad = _impl.lis_loss_grad
neighbourhood_sums = _impl.neighbourhood_sums

__all__ = [
    "BACKEND",
    "knn_select",
    "rank_matrix",
    "lis_loss_grad",
    "neighbourhood_sums",
]
