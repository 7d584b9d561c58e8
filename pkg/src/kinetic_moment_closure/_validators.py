"""Reusable pydantic validators for configuration fields."""

from typing import Annotated, Any

from pydantic import BeforeValidator, Field


def _split_list(value: Any) -> list[Any]:
    """Accept a comma separated string or any iterable of scalars."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
        return [p for p in parts if p]
    if isinstance(value, (int, float)):
        return [value]
    return list(value)


def create_ascending_sequence_validator(lo: float, hi: float) -> Any:
    """Create a tuple-of-floats type that is strictly ascending in ``(lo, hi]``.

    Args:
        lo: Exclusive lower bound.
        hi: Inclusive upper bound.

    Returns:
        An Annotated type with parsing and ordering checks.
    """

    def validate_ascending(value: Any) -> tuple[float, ...]:
        """Parse the value and check bounds and strict ordering."""
        items = tuple(float(v) for v in _split_list(value))
        if not items:
            raise ValueError("Sequence must not be empty")
        for item in items:
            if not lo < item <= hi:
                raise ValueError(f"Value {item!r} is outside ({lo}, {hi}]")
        if any(b <= a for a, b in zip(items, items[1:])):
            raise ValueError(f"Sequence must be strictly ascending, got {items!r}")
        return items

    return Annotated[
        tuple[float, ...],
        BeforeValidator(validate_ascending),
        Field(json_schema_extra={"format": "ascending"}),
    ]


def create_even_integer_validator(minimum: int) -> Any:
    """Create an integer type that must be even and at least ``minimum``.

    Args:
        minimum: Smallest admissible value.

    Returns:
        An Annotated type with the parity check.
    """

    def validate_even(value: Any) -> int:
        """Check the parity and lower bound."""
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise ValueError(f"Expected an integer, got {value!r}")
        number = int(float(value))
        if number % 2 != 0:
            raise ValueError(f"Value must be even, got {number}")
        if number < minimum:
            raise ValueError(f"Value must be at least {minimum}, got {number}")
        return number

    return Annotated[int, BeforeValidator(validate_even)]


def create_grid_list_validator() -> Any:
    """Create a type for a list of strictly increasing positive cell counts.

    Returns:
        An Annotated type accepting ``"10,20,40"`` or ``[10, 20, 40]``.
    """

    def validate_grids(value: Any) -> tuple[int, ...]:
        """Parse the grid list and check it."""
        grids = tuple(int(v) for v in _split_list(value))
        if not grids:
            raise ValueError("Grid list must not be empty")
        if any(g < 1 for g in grids):
            raise ValueError(f"Cell counts must be positive, got {grids!r}")
        if any(b <= a for a, b in zip(grids, grids[1:])):
            raise ValueError(f"Cell counts must be strictly increasing, got {grids!r}")
        return grids

    return Annotated[tuple[int, ...], BeforeValidator(validate_grids)]
