"""Steering-strength analysis laboratory.

Thin Python surface over the C++ core: concept datasets, the unconstrained
features model, difference-of-means steering, alpha-sweep analysis, and a
toy transformer for the large-alpha limit.
"""

try:
    from ._steerlab import *  # noqa: F401,F403  (installed package layout)
    from ._steerlab import __doc__ as _core_doc
except ImportError:  # in-tree builds put the module on PYTHONPATH instead
    from _steerlab import *  # noqa: F401,F403
    from _steerlab import __doc__ as _core_doc

__version__ = "0.1.0"
