"""Exception hierarchy shared across the package.

Grouping matters mostly for the command line front end, which maps
``UsageError`` to exit code 2 and ``CapacityError``/``UndersampledError``
to exit code 3.
"""

from __future__ import annotations


class TbrwError(Exception):
    """Base class for all package-specific errors."""


class UsageError(TbrwError):
    """A request that is malformed or out of the supported domain."""


class DegenerateLawError(TbrwError):
    """The leaf law puts no mass on adding leaves, so the tree never grows."""


class CapabilityError(TbrwError):
    """The input lacks data required by the operation (e.g. dropped positions)."""


class CapacityError(TbrwError):
    """The request exceeds a hard resource cap (enumeration horizon, etc.)."""


class UndersampledError(TbrwError):
    """Too few samples survived filtering to produce the requested estimate."""


class HorizonError(TbrwError):
    """A query beyond the usable (censor-safe) part of a trajectory."""
