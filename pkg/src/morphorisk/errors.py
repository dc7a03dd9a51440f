"""Typed error hierarchy shared across the package."""


class MorphoriskError(Exception):
    """Base class for all package errors."""


# --- volume / score extraction ---

class OutOfRange(MorphoriskError):
    pass


class MissingVertebra(MorphoriskError):
    pass


class MissingDemographic(MorphoriskError):
    pass


class MissingStats(MorphoriskError):
    pass


class CatalogError(MorphoriskError):
    """Aggregates sub-operation failures with the offending (metric, level)."""

    def __init__(self, failures):
        self.failures = list(failures)
        msg = "; ".join(f"{m}@{lv}: {err}" for m, lv, err in self.failures)
        super().__init__(f"catalog extraction failed: {msg}")


# --- model fitting ---

class SingularInformation(MorphoriskError):
    pass


class ConstantColumn(MorphoriskError):
    pass


class ColumnMismatch(MorphoriskError):
    pass


class NoEvents(MorphoriskError):
    pass


class OneClass(MorphoriskError):
    pass


# --- metrics ---

class NoUsablePairs(MorphoriskError):
    pass


class DegenerateGroups(MorphoriskError):
    pass


class TooManyDegenerate(MorphoriskError):
    pass


class ZeroCensoringWeight(MorphoriskError):
    pass


# --- pipeline ---

class AllRowsFailed(MorphoriskError):
    pass


# --- file formats / ingestion ---

class BadMagic(MorphoriskError):
    pass


class TruncatedFile(MorphoriskError):
    pass


class IllegalLabel(MorphoriskError):
    pass


class NonPositiveSpacing(MorphoriskError):
    pass


class SchemaMismatch(MorphoriskError):
    pass


class BinMismatch(MorphoriskError):
    pass


class RangeViolation(MorphoriskError):
    pass


class ConfigInvalid(MorphoriskError):
    pass


class MissingUpstream(MorphoriskError):
    pass
