"""Exception hierarchy shared across the library.

Each class maps to one machine-parseable CLI error category (see cli.py).
"""


class DemorphLabError(Exception):
    """Base class for all library errors."""

    category = "internal_error"


class StructuralError(DemorphLabError):
    """Mismatched shapes, point counts, or incompatible tensor layouts."""

    category = "structural_error"


class DegenerateGeometryError(DemorphLabError):
    """Geometry too degenerate to process (e.g. all-collinear landmarks)."""

    category = "degenerate_geometry"


class ManifestError(DemorphLabError):
    """Missing, malformed, or unresolvable manifest content."""

    category = "manifest_error"


class SplitError(DemorphLabError):
    """Dataset cannot be partitioned as requested."""

    category = "split_error"


class ConfigError(DemorphLabError):
    """Invalid configuration value or combination."""

    category = "config_error"


class CheckpointError(DemorphLabError):
    """Checkpoint file missing, corrupt, or incompatible."""

    category = "checkpoint_error"


class NonFiniteLossError(DemorphLabError):
    """A training loss component became NaN or infinite."""

    category = "nonfinite_loss"


class EvaluationError(DemorphLabError):
    """Metric undefined for the given inputs (e.g. zero variance)."""

    category = "evaluation_error"
