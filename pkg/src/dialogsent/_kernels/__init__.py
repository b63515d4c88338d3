"""Hot loops of the random forest, compiled when possible.

``BACKEND`` is ``"cython"`` if the extension was built, else ``"python"``.
Set ``DIALOGSENT_KERNELS=python`` to force the fallback.
"""

import os

from . import _slow

BACKEND = "python"
best_split = _slow.best_split
apply_tree = _slow.apply_tree

if os.environ.get("DIALOGSENT_KERNELS", "").lower() != "python":
    try:
        from . import _fast
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        best_split = _fast.best_split
        apply_tree = _fast.apply_tree

__all__ = ["BACKEND", "best_split", "apply_tree"]
