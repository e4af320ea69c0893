"""Exception hierarchy for the volsearch engine.

Errors are split by origin so the CLI can map them to exit codes:
input-side problems (bad files, bad parameters, inconsistent data) are
distinguishable from unexpected runtime failures.
"""

from __future__ import annotations


class VolsearchError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(VolsearchError):
    """A binary or text input file is structurally malformed.

    Where possible the message names the byte offset (binary stores) or
    line number (JSON-lines metadata) of the first violation.
    """


class ConsistencyError(VolsearchError):
    """Inputs parse individually but disagree with each other.

    Examples: a metadata row referencing a volume id absent from the
    embedding store, a slice count mismatch, or an id that appears twice.
    """


class ValidationError(VolsearchError):
    """A parameter, spec, or in-memory structure violates its invariants."""


class QueryError(VolsearchError):
    """A query is incompatible with the index or corpus it is run against."""


class SamplingError(VolsearchError):
    """An experiment split cannot be drawn under the requested constraints."""


#: Error classes that indicate bad input rather than an internal failure.
INPUT_ERRORS = (FormatError, ConsistencyError, ValidationError)
