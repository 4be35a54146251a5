"""Exception hierarchy shared by all segqc modules."""


class SegQCError(Exception):
    """Base class for every error raised deliberately by segqc."""


class ShapeMismatchError(SegQCError, ValueError):
    pass


class VolumeFormatError(SegQCError, ValueError):
    """A volume file could not be parsed (bad magic, datatype, dims, truncation)."""


class EncodingRangeError(SegQCError, ValueError):
    """A voxel value cannot be represented in the requested on-disk encoding."""


class NoForegroundError(SegQCError, ValueError):
    pass


class DegenerateInputError(SegQCError, ValueError):
    """Statistics are undefined for the given input (zero variance, too few points)."""


class MissingScoreError(SegQCError, KeyError):
    def __init__(self, case_id, field):
        self.case_id = case_id
        self.field = field
        super().__init__(f"case {case_id!r} has no value for {field!r}")

    def __str__(self):
        return self.args[0]


class ConfigError(SegQCError, ValueError):
    pass


class GenerationError(SegQCError, RuntimeError):
    pass


class InvariantError(SegQCError, AssertionError):
    """An internal consistency check failed; indicates a bug, not bad input."""
