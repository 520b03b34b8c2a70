"""Hierarchical federated learning simulator with vehicle mobility.

The heavy lifting lives in the compiled extension; this package re-exports
its surface.
"""

try:
    from ._mobhfl import *  # noqa: F401,F403  (wheel layout)
    from ._mobhfl import __doc__  # noqa: F401
except ImportError:
    from _mobhfl import *  # noqa: F401,F403  (flat build-tree layout)
    from _mobhfl import __doc__  # noqa: F401

__all__ = [name for name in dir() if not name.startswith("_")]
