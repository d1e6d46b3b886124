"""Exception types shared by the library and the command line.

Every error carries a short machine-parsable ``code`` and the exit status the
CLI uses for it.
"""

from __future__ import annotations


class WatchError(Exception):
    code = "error"
    exit_status = 1


class FormatError(WatchError):
    code = "bad_format"
    exit_status = 2


class ValidationError(WatchError):
    code = "invalid_input"
    exit_status = 3


class DimensionMismatch(ValidationError):
    code = "dimension_mismatch"
    exit_status = 4


class OutOfRange(ValidationError):
    code = "out_of_range"
    exit_status = 5


class FingerprintMismatch(WatchError):
    code = "fingerprint_mismatch"
    exit_status = 6


class TrainingDiverged(WatchError):
    code = "training_diverged"
    exit_status = 7


class EmptyEvaluation(WatchError):
    code = "no_known_month_sites"
    exit_status = 8
