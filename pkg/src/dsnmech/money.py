"""Fixed-point currency: amounts are integer micro-units (6 decimal places)."""

from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal

SCALE = 10**6
QUANTUM = Decimal("0.000001")


def to_units(amount: Decimal | int | str | float) -> int:
    """Convert a currency amount to integer micro-units.

    Floats go through ``str`` so ``0.01`` means one cent, not its binary
    approximation.
    """
    if isinstance(amount, float):
        amount = str(amount)
    value = Decimal(amount).quantize(QUANTUM, rounding=ROUND_HALF_EVEN)
    return int(value * SCALE)


def from_units(units: int) -> Decimal:
    return (Decimal(units) / SCALE).quantize(QUANTUM)


def fmt(units: int) -> str:
    """Render micro-units without trailing zeros (``1.5``, ``-20``)."""
    text = format(from_units(units).normalize(), "f")
    return text
