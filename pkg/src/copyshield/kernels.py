"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise (or when
``COPYSHIELD_PURE_PYTHON`` is set to a non-empty value) the numpy fallback
takes over. Both produce bit-identical results.
"""

import os

from . import _pykernels as python_backend

try:
    if os.environ.get("COPYSHIELD_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

mlp_logits = _impl.mlp_logits
mlp_jacobian = _impl.mlp_jacobian
mlp_batch_grads = _impl.mlp_batch_grads
qim_response = _impl.qim_response
ss_response = _impl.ss_response
quant_residual = _impl.quant_residual

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "mlp_logits",
    "mlp_jacobian",
    "mlp_batch_grads",
    "qim_response",
    "ss_response",
    "quant_residual",
]
