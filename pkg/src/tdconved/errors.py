"""Exception hierarchy.

Each class carries a short ``category`` string; the CLI prints it as the
machine-readable prefix of its one-line error message.
"""


class TDConvError(Exception):
    category = "error"


class ShapeError(TDConvError, ValueError):
    category = "shape"


class ConfigError(TDConvError, ValueError):
    category = "config"


class FormatError(TDConvError, ValueError):
    category = "format"


class CapacityError(TDConvError, ValueError):
    category = "capacity"


class ContractError(TDConvError, RuntimeError):
    category = "contract"


def check_shape(name: str, arr, expected: tuple) -> None:
    """Raise ShapeError unless ``arr.shape`` matches ``expected`` (None = any)."""
    shape = tuple(arr.shape)
    if len(shape) != len(expected) or any(
        e is not None and e != s for e, s in zip(expected, shape)
    ):
        raise ShapeError(f"{name}: expected shape {expected}, got {shape}")
