"""MMWR epidemiological calendar arithmetic.

MMWR weeks run Sunday through Saturday. Week 1 of an MMWR year is the first
week containing at least four days of that calendar year, which is the week
whose Wednesday falls in January; equivalently, each MMWR year starts on the
Sunday on or before January 4.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from functools import total_ordering

from .errors import ContractError

MIN_YEAR = 1990
MAX_YEAR = 2100


@total_ordering
@dataclass(frozen=True)
class MmwrWeek:
    year: int
    week: int
    start_date: dt.date

    def __str__(self) -> str:
        return f"{self.year}W{self.week:02d}"

    def _key(self):
        return self.start_date

    def __lt__(self, other) -> bool:
        return self.start_date < other.start_date

    def plus_weeks(self, n: int) -> "MmwrWeek":
        return mmwr_week_of(self.start_date + dt.timedelta(weeks=n))


def sunday_on_or_before(date: dt.date) -> dt.date:
    # Python weekday(): Monday=0 .. Sunday=6
    return date - dt.timedelta(days=(date.weekday() + 1) % 7)


def mmwr_year_start(year: int) -> dt.date:
    """First day (a Sunday) of MMWR week 1 of ``year``."""
    return sunday_on_or_before(dt.date(year, 1, 4))


def mmwr_week_of(date: dt.date) -> MmwrWeek:
    """Map a calendar date to its MMWR week."""
    if not MIN_YEAR <= date.year <= MAX_YEAR:
        raise ContractError(f"date {date} outside supported range {MIN_YEAR}-{MAX_YEAR}")
    year = date.year
    if date >= mmwr_year_start(year + 1):
        year += 1
    elif date < mmwr_year_start(year):
        year -= 1
    start = mmwr_year_start(year)
    week = (date - start).days // 7 + 1
    return MmwrWeek(year, week, start + dt.timedelta(weeks=week - 1))


def weeks_in_mmwr_year(year: int) -> int:
    return (mmwr_year_start(year + 1) - mmwr_year_start(year)).days // 7


def week_range(first: MmwrWeek, last: MmwrWeek) -> list[MmwrWeek]:
    """All MMWR weeks from ``first`` to ``last`` inclusive."""
    if last.start_date < first.start_date:
        raise ContractError(f"week range reversed: {first} .. {last}")
    out = []
    cursor = first.start_date
    while cursor <= last.start_date:
        out.append(mmwr_week_of(cursor))
        cursor += dt.timedelta(weeks=1)
    return out
