"""UTC timestamps in the one shape the platform ever serializes."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from typing import Callable

Clock = Callable[[], datetime]

TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


def utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def fmt_ts(dt: datetime) -> str:
    if dt.tzinfo is None:
        raise ValueError("naive datetime not accepted")
    return dt.astimezone(timezone.utc).replace(microsecond=0).strftime(TS_FORMAT)


def parse_ts(value: str) -> datetime:
    try:
        dt = datetime.strptime(value, TS_FORMAT)
    except ValueError as exc:
        raise ValueError(f"bad timestamp {value!r}") from exc
    return dt.replace(tzinfo=timezone.utc)


def fixed_clock(at: datetime) -> Clock:
    """Clock that always returns `at`; used by tests and lockstep demos."""
    return lambda: at


def days(n: int) -> timedelta:
    return timedelta(days=n)
