"""Set input-to-state stability tools for systems with input delay."""

__version__ = "0.1.0"

from . import gains, sets, dde, razumikhin, systems  # noqa: E402,F401
