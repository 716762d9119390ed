"""Kernel backend selection.

The compiled extension is preferred; the pure numpy fallback is used when the
extension is missing or ``LORENTZMIX_PURE=1``.  Both expose the same API:
``step_batch``, ``trace_batch``, ``trace_jumps``, ``first_return_batch`` and a
``BACKEND`` tag.
"""

import os

from . import _pure

if os.environ.get("LORENTZMIX_PURE", "") == "1":
    _impl = _pure
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND
step_batch = _impl.step_batch
trace_batch = _impl.trace_batch
trace_jumps = _impl.trace_jumps
first_return_batch = _impl.first_return_batch


def get_backend(name=None):
    """Return a kernel module by name ('cython', 'pure', or None for active)."""
    if name is None:
        return _impl
    if name == "pure":
        return _pure
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend: {name!r}")
