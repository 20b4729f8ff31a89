"""Time discretization, power profiles, tariffs and committed-band arithmetic.

These are the value types every other module trades in: a ``Profile`` is the
universal currency between building controllers and the coordinating ISO.
All types are immutable; hours wrap modulo 24 when a horizon crosses midnight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "Profile",
    "TariffSchedule",
    "Band",
    "tariff_price",
    "aggregate",
    "band_violation",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform hourly grid: `n_steps` steps of `step_hours` starting at `start_hour`."""

    start_hour: int = 0
    step_hours: float = 1.0
    n_steps: int = 24

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.step_hours <= 0:
            raise ValueError(f"step_hours must be > 0, got {self.step_hours}")

    def hour_of_day(self, k: int) -> int:
        """Hour-of-day (0-23) at the start of step k, wrapping past midnight."""
        return int(self.start_hour + k * self.step_hours) % 24


@dataclass(frozen=True)
class Profile:
    """Fixed-length vector of power values (kW) over a time grid."""

    grid: TimeGrid
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) != self.grid.n_steps:
            raise ValueError(
                f"profile length {len(vals)} != grid n_steps {self.grid.n_steps}"
            )
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("profile values must be finite")

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "Profile":
        return cls(grid, (0.0,) * grid.n_steps)

    @classmethod
    def from_array(cls, grid: TimeGrid, arr: Iterable[float]) -> "Profile":
        return cls(grid, tuple(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, k: int) -> float:
        return self.values[k]

    def __add__(self, other: "Profile") -> "Profile":
        if self.grid != other.grid:
            raise ValueError("profiles live on different grids")
        return Profile(self.grid, tuple(a + b for a, b in zip(self.values, other.values)))

    def __sub__(self, other: "Profile") -> "Profile":
        if self.grid != other.grid:
            raise ValueError("profiles live on different grids")
        return Profile(self.grid, tuple(a - b for a, b in zip(self.values, other.values)))

    def shift(self, steps: int = 1) -> "Profile":
        """Drop the first `steps` values and repeat the last one (horizon roll)."""
        vals = self.values[steps:] + (self.values[-1],) * steps
        return Profile(self.grid, vals)


def _hourly(day_price: float, night_price: float, day_hours: Sequence[int]) -> tuple[float, ...]:
    prices = [night_price] * 24
    for h in day_hours:
        prices[h] = day_price
    return tuple(prices)


@dataclass(frozen=True)
class TariffSchedule:
    """Import/export electricity prices, fuel price and penalty coefficients.

    `import_price` is piecewise constant per hour-of-day.  Penalty units:
    comfort in CHF/(K*h), band and global violations in CHF/kW_e.
    """

    import_price: tuple[float, ...]
    export_price: float = 0.1
    fuel_price: float = 0.10
    c_p_conf: float = 10.0
    c_p_grid: float = 0.5
    c_global: float = 0.25

    def __post_init__(self) -> None:
        if len(self.import_price) != 24:
            raise ValueError("import_price must cover all 24 hours")
        prices = (self.export_price, self.fuel_price, self.c_p_conf,
                  self.c_p_grid, self.c_global) + tuple(self.import_price)
        if any(p < 0 for p in prices):
            raise ValueError("prices and penalty rates must be >= 0")
        if any(p < self.export_price for p in self.import_price):
            raise ValueError("import price must be >= export price at every hour")

    @classmethod
    def day_night(cls, **overrides) -> "TariffSchedule":
        """Standard day-night tariff: 0.24 from 7am to 10pm, 0.13 otherwise."""
        return cls(import_price=_hourly(0.24, 0.13, range(7, 22)), **overrides)

    @classmethod
    def ahead24(cls, **overrides) -> "TariffSchedule":
        """Day-ahead shaped tariff: 0.21 from 5pm to 11am, 0.16 in between."""
        return cls(import_price=_hourly(0.16, 0.21, range(11, 17)), **overrides)


def tariff_price(schedule: TariffSchedule, hour: int) -> float:
    """Import price (CHF/kWh_e) for the given hour-of-day."""
    if not 0 <= hour <= 23:
        raise ValueError(f"hour must be in [0, 23], got {hour}")
    return schedule.import_price[hour]


@dataclass(frozen=True)
class Band:
    """Committed aggregate profile plus a symmetric no-penalty half width (kW)."""

    committed: Profile
    half_width: float = 2.0

    def __post_init__(self) -> None:
        if self.half_width < 0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")


def aggregate(profiles: Sequence[Profile], grid: TimeGrid | None = None) -> Profile:
    """Element-wise sum of profiles; an empty list yields the zero profile.

    Summation runs in list order so results are bit-reproducible.
    """
    if not profiles:
        if grid is None:
            raise ValueError("aggregating an empty list requires an explicit grid")
        return Profile.zeros(grid)
    g = profiles[0].grid
    total = list(profiles[0].values)
    for p in profiles[1:]:
        if p.grid != g:
            raise ValueError("profiles live on different grids")
        for k, v in enumerate(p.values):
            total[k] += v
    return Profile(g, tuple(total))


def band_violation(actual: Profile, band: Band) -> Profile:
    """Per-step violation magnitude max(0, |actual - committed| - half_width)."""
    if actual.grid != band.committed.grid:
        raise ValueError("profile and band live on different grids")
    w = band.half_width
    vals = tuple(
        max(0.0, abs(a - c) - w)
        for a, c in zip(actual.values, band.committed.values)
    )
    return Profile(actual.grid, vals)
