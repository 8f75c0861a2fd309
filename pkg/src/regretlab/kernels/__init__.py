"""Hot loops: perturbed rollouts and the batched loss/gradient.

The compiled ``_core`` extension is used when it was built; otherwise the
numpy ``_fallback`` is selected. Set ``REGRETLAB_KERNELS=python`` to force the
fallback.
"""
import importlib
import os

from . import _fallback

SOFTMAX, BALL, IDENTITY = _fallback.SOFTMAX, _fallback.BALL, _fallback.IDENTITY

_core = None
if os.environ.get("REGRETLAB_KERNELS", "").lower() != "python":
    try:
        _core = importlib.import_module("._core", __name__)
    except ImportError:  # extension not built
        _core = None

BACKEND = "compiled" if _core is not None else "python"
_impl = _core if _core is not None else _fallback

fol_rollout = _impl.fol_rollout
mab_rollout = _impl.mab_rollout
loss_and_grad = _impl.loss_and_grad


def backends():
    """Available implementations by name, for parity tests and benchmarks."""
    out = {"python": _fallback}
    if _core is not None:
        out["compiled"] = _core
    return out
