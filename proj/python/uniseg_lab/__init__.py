"""Unified-label-space segmentation lab.

Thin re-export of the compiled core: label-space construction, the three
losses, the per-pixel model, synthetic dataset generation, training (with
automatic class-relation discovery) and IoU evaluation.
"""

try:
    # installed wheel: the extension lives inside this package
    from ._uniseg import *  # noqa: F401,F403
    from ._uniseg import __doc__ as _core_doc  # noqa: F401
except ImportError:
    # build-tree layout: the extension sits on PYTHONPATH next to us
    from _uniseg import *  # noqa: F401,F403
    from _uniseg import __doc__ as _core_doc  # noqa: F401

__version__ = "0.1.0"
