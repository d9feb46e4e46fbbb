class DimensionError(ValueError):
    """Raised when two operands of a numeric operation have incompatible shapes."""


def checkWidth(name, actual, expected):
    # Shared guard for every layer/loss entry point
    if actual != expected:
        raise DimensionError(f"{name}: expected width {expected}, got {actual}")


def checkSameShape(name, first, second):
    if first.shape != second.shape:
        raise DimensionError(f"{name}: shape {first.shape} does not match {second.shape}")
