"""Backend selection for the numerical hot loops.

The compiled extension is used when it was built; otherwise, or when
``SECURE_HFL_PURE_PYTHON=1`` is set, the numpy implementation is used.
Results agree across backends to floating-point rounding only, so
byte-identical outputs are guaranteed per backend, not across them.
"""
import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SECURE_HFL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")

sgd_train = _impl.sgd_train
# batched inference is a matrix product: numpy/BLAS beats a hand loop here
predict = _kernels_py.predict
dot_norms = _impl.dot_norms
