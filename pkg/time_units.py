"""
Integer-picosecond time strings: `24ns`, `1.5ms`, `1000` (bare numbers are ps)
"""
from decimal import Decimal, InvalidOperation

PS_PER_UNIT = {
    "ps": 1,
    "ns": 1_000,
    "us": 1_000_000,
    "ms": 1_000_000_000,
    "s": 1_000_000_000_000,
}


def parse_time(text: str) -> int:
    """Convert a time string to whole picoseconds, exactly.

    Raises ValueError on an unknown unit, a negative value or a value that is
    not a whole number of picoseconds.
    """
    raw = str(text).strip().lower()
    unit = "ps"
    for suffix in sorted(PS_PER_UNIT, key=len, reverse=True):
        if raw.endswith(suffix):
            unit = suffix
            raw = raw[: -len(suffix)].strip()
            break
    try:
        value = Decimal(raw) * PS_PER_UNIT[unit]
    except InvalidOperation:
        raise ValueError(f"invalid time {text!r}") from None
    if not value.is_finite() or value < 0:
        raise ValueError(f"time must be a finite non-negative value, got {text!r}")
    if value != value.to_integral_value():
        raise ValueError(f"time {text!r} is not a whole number of picoseconds")
    return int(value)


def format_time(ps: int) -> str:
    """Largest unit that represents `ps` exactly, e.g. 24000 -> '24ns'"""
    if ps == 0:
        return "0ps"
    for unit in ("s", "ms", "us", "ns"):
        if ps % PS_PER_UNIT[unit] == 0:
            return f"{ps // PS_PER_UNIT[unit]}{unit}"
    return f"{ps}ps"
