"""Knowledge-grounded reasoning evaluation: python bindings over the C++ core."""

try:
    from ._pkeval import *  # noqa: F401,F403  (installed package layout)
    from ._pkeval import __version__  # noqa: F401
except ImportError:  # in-tree builds put the extension on sys.path directly
    from _pkeval import *  # noqa: F401,F403
    from _pkeval import __version__  # noqa: F401
