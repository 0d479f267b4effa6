"""Temporal statistics of encounter episodes.

Every episode is placed in time by its ``first_time``. Local time is UTC
plus a fixed ``tz_offset`` in hours; Saturday and Sunday are the weekend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encounters import EpisodeTable, as_episode_table

DAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
WEEKDAY, WEEKEND = 0, 1
DAY_SECONDS = 86_400
# 1970-01-01 was a Thursday.
_EPOCH_WEEKDAY = 3


def local_day_hour(times: np.ndarray, tz_offset: float) -> tuple[np.ndarray, np.ndarray]:
    """Day of week (Monday = 0) and hour of day in local time."""
    local = np.asarray(times, dtype=np.int64) + int(round(tz_offset * 3600))
    days = np.floor_divide(local, DAY_SECONDS)
    dow = (days + _EPOCH_WEEKDAY) % 7
    hour = np.floor_divide(local - days * DAY_SECONDS, 3600)
    return dow.astype(np.int64), hour.astype(np.int64)


def _transitions(table: EpisodeTable) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (k, k+1) of consecutive episodes of the same pair."""
    if len(table) < 2:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy()
    same = (table.ua[1:] == table.ua[:-1]) & (table.ub[1:] == table.ub[:-1])
    prev = np.flatnonzero(same)
    return prev, prev + 1


@dataclass
class HourlyProfile:
    counts: np.ndarray  # (7, 24), rows Monday..Sunday
    tz_offset: float

    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        lines = ["day,hour,count"]
        for d in range(7):
            for h in range(24):
                lines.append(f"{DAYS[d]},{h},{int(self.counts[d, h])}")
        return "\n".join(lines) + "\n"


def hourly_profile(episodes, tz_offset: float = 2.0) -> HourlyProfile:
    table = as_episode_table(episodes)
    dow, hour = local_day_hour(table.first, tz_offset)
    counts = np.bincount(dow * 24 + hour, minlength=7 * 24).reshape(7, 24)
    return HourlyProfile(counts.astype(np.int64), tz_offset)


@dataclass
class InterEventDistribution:
    """Histogram of inter-event gaps as probability mass per bin.

    With ``centered`` bins, bin m covers [m*bin - bin/2, m*bin + bin/2),
    so a gap of exactly m*bin sits in the middle of bin m and symmetric
    jitter around a period does not split its mass across two bins.
    Otherwise bin m covers [m*bin, (m+1)*bin).
    """

    bin_seconds: int
    counts: np.ndarray
    sample_count: int
    centered: bool = True

    @property
    def density(self) -> list[tuple[int, float]]:
        """(bin_index, probability mass) for every nonempty bin."""
        if self.sample_count == 0:
            return []
        probs = self.probabilities
        return [(int(i), float(probs[i])) for i in np.flatnonzero(self.counts)]

    @property
    def probabilities(self) -> np.ndarray:
        if self.sample_count == 0:
            return np.zeros(len(self.counts))
        return self.counts / self.sample_count

    def modal_bin(self) -> int:
        if self.sample_count == 0:
            raise ValueError("empty distribution")
        return int(np.argmax(self.counts))

    def bin_start(self, index: int) -> int:
        if self.centered:
            return max(0, index * self.bin_seconds - self.bin_seconds // 2)
        return index * self.bin_seconds

    def bin_of(self, seconds: int) -> int:
        if self.centered:
            return (seconds + self.bin_seconds // 2) // self.bin_seconds
        return seconds // self.bin_seconds

    def to_csv(self) -> str:
        lines = ["bin_start_s,probability,count"]
        probs = self.probabilities
        for i, c in enumerate(self.counts.tolist()):
            lines.append(f"{self.bin_start(i)},{float(probs[i])!r},{c}")
        return "\n".join(lines) + "\n"


def inter_event_gaps(episodes) -> np.ndarray:
    """Gaps between consecutive episode start times, per pair, across towers."""
    table = as_episode_table(episodes)
    prev, nxt = _transitions(table)
    return table.first[nxt] - table.first[prev]


def inter_event_distribution(episodes, bin_seconds: int = 3600, centered: bool = True) -> InterEventDistribution:
    if bin_seconds <= 0:
        raise ValueError("bin_seconds must be positive")
    bin_seconds = int(bin_seconds)
    gaps = inter_event_gaps(episodes)
    if len(gaps) == 0:
        return InterEventDistribution(bin_seconds, np.zeros(0, dtype=np.int64), 0, centered)
    shift = bin_seconds // 2 if centered else 0
    bins = np.floor_divide(gaps + shift, bin_seconds)
    counts = np.bincount(bins).astype(np.int64)
    return InterEventDistribution(bin_seconds, counts, int(len(gaps)), centered)


@dataclass
class ConsecutiveTimeMatrix:
    day_class: np.ndarray  # (2, 2): weekday/weekend of episode k -> of episode k+1
    hours: np.ndarray  # (24, 24): hour of episode k -> hour of episode k+1

    def off_diagonal_fraction(self) -> float:
        total = self.day_class.sum()
        if total == 0:
            return 0.0
        return float((self.day_class[0, 1] + self.day_class[1, 0]) / total)

    def to_csv(self) -> str:
        names = ("weekday", "weekend")
        lines = ["row,col,count"]
        for i in range(2):
            for j in range(2):
                lines.append(f"{names[i]},{names[j]},{int(self.day_class[i, j])}")
        for i in range(24):
            for j in range(24):
                lines.append(f"h{i},h{j},{int(self.hours[i, j])}")
        return "\n".join(lines) + "\n"


def consecutive_time_matrix(episodes, tz_offset: float = 2.0) -> ConsecutiveTimeMatrix:
    table = as_episode_table(episodes)
    prev, nxt = _transitions(table)
    dow, hour = local_day_hour(table.first, tz_offset)
    cls = (dow >= 5).astype(np.int64)
    day = np.bincount(cls[prev] * 2 + cls[nxt], minlength=4).reshape(2, 2)
    hours = np.bincount(hour[prev] * 24 + hour[nxt], minlength=24 * 24).reshape(24, 24)
    return ConsecutiveTimeMatrix(day.astype(np.int64), hours.astype(np.int64))


def transition_dump(episodes, tz_offset: float = 2.0) -> str:
    """Raw consecutive-episode times for scatter plots."""
    table = as_episode_table(episodes)
    prev, nxt = _transitions(table)
    lines = ["user_a,user_b,first_epoch_s,next_epoch_s,first_tower,next_tower"]
    users, towers = table.users, table.towers
    for p, n in zip(prev.tolist(), nxt.tolist()):
        lines.append(
            f"{users[table.ua[p]]},{users[table.ub[p]]},{table.first[p]},{table.first[n]},"
            f"{towers[table.tower[p]]},{towers[table.tower[n]]}"
        )
    return "\n".join(lines) + "\n"
