"""Exception types shared across the pipeline."""


class MoireforgeError(Exception):
    """Base class for all pipeline errors."""


class DataError(MoireforgeError):
    """Invalid, missing, or undecodable input data or artifacts."""


class TrainingError(MoireforgeError):
    """Training-time failure, e.g. a non-finite loss term."""
