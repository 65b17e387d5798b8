"""Multi-site imaging-metric cohorts: QA gating, tensor metrics, ComBat
harmonization, GAMLSS normative curves, and hypothesis testing.

The heavy lifting lives in the compiled ``_core`` module; this package simply
re-exports it.
"""

try:
    from cohortforge._core import *  # noqa: F401,F403
    from cohortforge._core import __version__  # noqa: F401
except ImportError:  # in-tree builds put _core.so on sys.path directly
    from _core import *  # noqa: F401,F403
    from _core import __version__  # noqa: F401
