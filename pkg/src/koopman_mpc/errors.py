"""Shared exception types."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values (NaN/inf)."""


def check_finite(arr, what: str):
    import numpy as np

    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr
