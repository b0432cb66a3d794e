"""Calendar arithmetic on epoch timestamps under a fixed dataset UTC offset.

All timestamps are stored as UTC epoch seconds.  Hour-of-day and day-of-week
semantics need local time, so every helper takes the dataset-level offset in
seconds (a single offset per corpus; no per-event time zones).
"""

SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400

# 1970-01-01 was a Thursday; shift so that Monday == 0.
_EPOCH_WEEKDAY = 3


def local_hour(timestamp: int, offset: int = 0) -> int:
    """Hour of day in [0, 24) at the given offset."""
    return int((timestamp + offset) % SECONDS_PER_DAY // SECONDS_PER_HOUR)


def local_weekday(timestamp: int, offset: int = 0) -> int:
    """Day of week at the given offset: 0=Monday .. 6=Sunday."""
    days = (timestamp + offset) // SECONDS_PER_DAY
    return int((days + _EPOCH_WEEKDAY) % 7)


def is_weekend(timestamp: int, offset: int = 0) -> bool:
    """True for Saturday and Sunday at the given offset."""
    return local_weekday(timestamp, offset) >= 5
