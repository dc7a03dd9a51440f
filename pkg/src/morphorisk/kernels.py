"""Kernel backend selection.

The compiled Cython extension is preferred; the pure-numpy fallback is
used when it is missing or when MORPHORISK_PURE=1 is set.  Both expose
the same three functions and produce identical results.
"""
import os

from . import _pure

if os.environ.get("MORPHORISK_PURE") == "1":
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"

slice_label_stats = _impl.slice_label_stats
auc_stat = _impl.auc_stat
concordance_counts = _impl.concordance_counts

N_LABELS = _pure.N_LABELS
BODY_HU_THRESHOLD = _pure.BODY_HU_THRESHOLD
