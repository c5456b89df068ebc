"""Mobility and transmission analysis: OD flows, R_t estimation, functional regression."""

__version__ = "0.1.0"

from .errors import EpimobError  # noqa: E402

__all__ = ["EpimobError", "__version__"]
