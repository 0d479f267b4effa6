"""Presence extraction and windowed per-tower co-location detection.

The engine works on integer-coded columns. Events are sorted by
(tower, time, user); for each event the in-window partners at the same
tower form a contiguous run that ``searchsorted`` locates, so candidate
pairs are generated without any all-pairs scan. Raw co-occurrences are
materialised in bounded chunks, reduced to partial episodes, and the
partials are merged in a final pass that is exact across chunk and
partition boundaries.

A raw co-occurrence of events at ``t_a <= t_b`` has time ``t_a``. Raw
co-occurrences of one (pair, tower) whose consecutive times differ by at
most the window belong to the same episode; the episode spans the
earliest and latest event times involved.
"""

from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
import polars as pl

from .cdr import CallRecord, CdrFrame
from .codes import build_vocab, encode

BRUTE_FORCE_LIMIT = 100_000
CHUNK_PAIRS = 2_000_000

EPISODE_COLUMNS = (
    "user_a",
    "user_b",
    "tower_id",
    "first_epoch_s",
    "last_epoch_s",
    "event_count",
)


@dataclass(frozen=True, order=True, slots=True)
class PresenceEvent:
    user_id: str
    tower_id: str
    timestamp: int


@dataclass(frozen=True, order=True, slots=True)
class PairKey:
    user_a: str
    user_b: str

    def __post_init__(self) -> None:
        if not self.user_a < self.user_b:
            raise ValueError(f"pair not canonical: {self.user_a!r}, {self.user_b!r}")

    @classmethod
    def of(cls, a: str, b: str) -> "PairKey":
        return cls(a, b) if a < b else cls(b, a)


@dataclass(frozen=True, slots=True)
class EncounterEpisode:
    pair: PairKey
    tower_id: str
    first_time: int
    last_time: int
    event_count: int

    def __post_init__(self) -> None:
        if self.last_time < self.first_time:
            raise ValueError("last_time precedes first_time")
        if self.event_count < 1:
            raise ValueError("event_count must be positive")

    def sort_key(self) -> tuple:
        return (self.pair, self.first_time, self.tower_id)


# ---------------------------------------------------------------------------
# columnar tables


@dataclass
class PresenceTable:
    """Deduplicated presence events, sorted by (tower, time, user)."""

    users: list[str]
    towers: list[str]
    user: np.ndarray
    tower: np.ndarray
    time: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    @classmethod
    def from_columns(cls, users, towers, user, tower, time) -> "PresenceTable":
        user = np.asarray(user, dtype=np.int32)
        tower = np.asarray(tower, dtype=np.int32)
        time = np.asarray(time, dtype=np.int64)
        order = np.lexsort((user, time, tower))
        user, tower, time = user[order], tower[order], time[order]
        if len(time) > 1:
            keep = np.ones(len(time), dtype=bool)
            keep[1:] = (user[1:] != user[:-1]) | (tower[1:] != tower[:-1]) | (time[1:] != time[:-1])
            user, tower, time = user[keep], tower[keep], time[keep]
        return cls(list(users), list(towers), user, tower, time)

    @classmethod
    def from_events(cls, events: Iterable[PresenceEvent]) -> "PresenceTable":
        events = list(events)
        users = sorted({e.user_id for e in events})
        towers = sorted({e.tower_id for e in events})
        uidx = {u: i for i, u in enumerate(users)}
        tidx = {t: i for i, t in enumerate(towers)}
        return cls.from_columns(
            users,
            towers,
            [uidx[e.user_id] for e in events],
            [tidx[e.tower_id] for e in events],
            [e.timestamp for e in events],
        )

    def to_events(self) -> list[PresenceEvent]:
        return [
            PresenceEvent(self.users[u], self.towers[t], int(ts))
            for u, t, ts in zip(self.user.tolist(), self.tower.tolist(), self.time.tolist())
        ]


@dataclass
class EpisodeTable:
    """Episodes as columns, sorted by (user_a, user_b, first_time, tower)."""

    users: list[str]
    towers: list[str]
    ua: np.ndarray
    ub: np.ndarray
    tower: np.ndarray
    first: np.ndarray
    last: np.ndarray
    count: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.first)

    @classmethod
    def empty(cls, users: Sequence[str] = (), towers: Sequence[str] = ()) -> "EpisodeTable":
        i32 = np.empty(0, dtype=np.int32)
        i64 = np.empty(0, dtype=np.int64)
        return cls(list(users), list(towers), i32, i32.copy(), i32.copy(), i64, i64.copy(), i64.copy())

    def sorted(self) -> "EpisodeTable":
        order = np.lexsort((self.tower, self.first, self.ub, self.ua))
        return self.take(order)

    def take(self, idx: np.ndarray) -> "EpisodeTable":
        return EpisodeTable(
            self.users,
            self.towers,
            self.ua[idx],
            self.ub[idx],
            self.tower[idx],
            self.first[idx],
            self.last[idx],
            self.count[idx],
            dict(self.meta),
        )

    def with_vocab(self, users: list[str], towers: list[str]) -> "EpisodeTable":
        """Re-express codes against larger sorted vocabularies."""
        from .codes import recode

        return EpisodeTable(
            list(users),
            list(towers),
            recode(self.ua, self.users, users),
            recode(self.ub, self.users, users),
            recode(self.tower, self.towers, towers),
            self.first,
            self.last,
            self.count,
            dict(self.meta),
        )

    @classmethod
    def from_episodes(cls, episodes: Iterable[EncounterEpisode]) -> "EpisodeTable":
        eps = list(episodes)
        users = sorted({e.pair.user_a for e in eps} | {e.pair.user_b for e in eps})
        towers = sorted({e.tower_id for e in eps})
        uidx = {u: i for i, u in enumerate(users)}
        tidx = {t: i for i, t in enumerate(towers)}
        table = cls(
            users,
            towers,
            np.array([uidx[e.pair.user_a] for e in eps], dtype=np.int32),
            np.array([uidx[e.pair.user_b] for e in eps], dtype=np.int32),
            np.array([tidx[e.tower_id] for e in eps], dtype=np.int32),
            np.array([e.first_time for e in eps], dtype=np.int64),
            np.array([e.last_time for e in eps], dtype=np.int64),
            np.array([e.event_count for e in eps], dtype=np.int64),
        )
        return table.sorted()

    def to_episodes(self) -> list[EncounterEpisode]:
        users, towers = self.users, self.towers
        return [
            EncounterEpisode(PairKey(users[a], users[b]), towers[t], f, l, c)
            for a, b, t, f, l, c in zip(
                self.ua.tolist(),
                self.ub.tolist(),
                self.tower.tolist(),
                self.first.tolist(),
                self.last.tolist(),
                self.count.tolist(),
            )
        ]

    def to_frame(self) -> pl.DataFrame:
        users = pl.Series(self.users, dtype=pl.Utf8)
        towers = pl.Series(self.towers, dtype=pl.Utf8)
        return pl.DataFrame(
            {
                "user_a": users.gather(self.ua) if len(self) else pl.Series([], dtype=pl.Utf8),
                "user_b": users.gather(self.ub) if len(self) else pl.Series([], dtype=pl.Utf8),
                "tower_id": towers.gather(self.tower) if len(self) else pl.Series([], dtype=pl.Utf8),
                "first_epoch_s": self.first,
                "last_epoch_s": self.last,
                "event_count": self.count,
            }
        )

    def write_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().write_csv(path, include_header=True, line_terminator="\n")


def as_episode_table(episodes) -> EpisodeTable:
    if isinstance(episodes, EpisodeTable):
        return episodes
    return EpisodeTable.from_episodes(episodes)


def read_episodes(path: Union[str, Path]) -> EpisodeTable:
    """Read an episode CSV written by :meth:`EpisodeTable.write_csv`."""
    schema = {
        "user_a": pl.Utf8,
        "user_b": pl.Utf8,
        "tower_id": pl.Utf8,
        "first_epoch_s": pl.Int64,
        "last_epoch_s": pl.Int64,
        "event_count": pl.Int64,
    }
    path = Path(path)
    if path.stat().st_size == 0:
        return EpisodeTable.empty()
    df = pl.read_csv(path, has_header=True, schema=schema, quote_char=None)
    if list(df.columns) != list(EPISODE_COLUMNS):
        raise ValueError(f"{path}: unexpected episode columns {df.columns}")
    users = build_vocab(df["user_a"], df["user_b"])
    towers = build_vocab(df["tower_id"])
    table = EpisodeTable(
        users.to_list(),
        towers.to_list(),
        encode(df["user_a"], users),
        encode(df["user_b"], users),
        encode(df["tower_id"], towers),
        df["first_epoch_s"].to_numpy(),
        df["last_epoch_s"].to_numpy(),
        df["event_count"].to_numpy(),
    )
    if len(table) and np.any(table.ua >= table.ub):
        raise ValueError(f"{path}: pairs must be canonical (user_a < user_b)")
    return table.sorted()


# ---------------------------------------------------------------------------
# presence extraction


def extract_presence(records: Sequence[CallRecord], policy: str = "caller_only") -> list[PresenceEvent]:
    """Presence events implied by call records, deduplicated and sorted."""
    if policy not in ("caller_only", "both_parties"):
        raise ValueError(f"unknown presence attribution {policy!r}")
    events = set()
    for rec in records:
        events.add(PresenceEvent(rec.caller_id, rec.tower_id, rec.start_time))
        if policy == "both_parties":
            events.add(PresenceEvent(rec.callee_id, rec.tower_id, rec.start_time))
    return sorted(events, key=lambda e: (e.timestamp, e.user_id, e.tower_id))


def presence_table(cdr: CdrFrame, policy: str = "caller_only") -> PresenceTable:
    """Columnar :func:`extract_presence` over a parsed CDR frame."""
    if policy not in ("caller_only", "both_parties"):
        raise ValueError(f"unknown presence attribution {policy!r}")
    df = cdr.frame
    cols = [df["caller_id"]]
    if policy == "both_parties":
        cols.append(df["callee_id"])
    users = build_vocab(*cols)
    towers = build_vocab(df["tower_id"])
    tower = encode(df["tower_id"], towers)
    time = df["start_time"].to_numpy()
    user = encode(df["caller_id"], users)
    if policy == "both_parties":
        user = np.concatenate([user, encode(df["callee_id"], users)])
        tower = np.concatenate([tower, tower])
        time = np.concatenate([time, time])
    return PresenceTable.from_columns(users.to_list(), towers.to_list(), user, tower, time)


# ---------------------------------------------------------------------------
# windowed join


def _merge_partials(ua, ub, tower, lo_first, lo_last, hi, count, window):
    """Chain-merge partial episodes of the same (pair, tower).

    Records are merged when the next record's earliest co-occurrence time
    is within ``window`` of the latest co-occurrence time seen so far in
    the current episode.
    """
    n = len(lo_first)
    if n == 0:
        return ua, ub, tower, lo_first, lo_last, hi, count
    order = np.lexsort((lo_first, tower, ub, ua))
    ua, ub, tower = ua[order], ub[order], tower[order]
    lo_first, lo_last, hi, count = lo_first[order], lo_last[order], hi[order], count[order]

    key_change = np.ones(n, dtype=bool)
    key_change[1:] = (ua[1:] != ua[:-1]) | (ub[1:] != ub[:-1]) | (tower[1:] != tower[:-1])
    group = np.cumsum(key_change) - 1
    base = int(lo_last.min())
    stride = int(lo_last.max()) - base + 1
    if stride * (int(group[-1]) + 1) < 2**62:
        shifted = group.astype(np.int64) * stride + (lo_last - base)
        running = np.maximum.accumulate(shifted) - group.astype(np.int64) * stride + base
    else:
        running = np.empty_like(lo_last)
        starts = np.flatnonzero(key_change)
        ends = np.append(starts[1:], n)
        for s, e in zip(starts, ends):
            running[s:e] = np.maximum.accumulate(lo_last[s:e])
    new = key_change.copy()
    new[1:] |= (lo_first[1:] - running[:-1]) > window
    starts = np.flatnonzero(new)
    return (
        ua[starts],
        ub[starts],
        tower[starts],
        lo_first[starts],
        np.maximum.reduceat(lo_last, starts),
        np.maximum.reduceat(hi, starts),
        np.add.reduceat(count, starts),
    )


def _join_range(tower, time, user, start, stop, window, chunk_pairs):
    """Partial episodes for events ``start:stop`` (whole towers only)."""
    t = tower[start:stop]
    ts = time[start:stop]
    u = user[start:stop]
    n = len(ts)
    empty = _empty_partials()
    if n < 2:
        return empty
    base = int(ts.min())
    stride = int(ts.max()) - base + window + 1
    tower_local = (t - t[0]).astype(np.int64)
    if stride * (int(tower_local[-1]) + 1) >= 2**62:
        # Span too wide for a composite key; fall back to one tower at a time.
        bounds = np.flatnonzero(np.diff(t)) + 1
        cuts = np.concatenate([[0], bounds, [n]])
        parts = [
            _join_range(tower, time, user, start + a, start + b, window, chunk_pairs)
            for a, b in zip(cuts[:-1], cuts[1:])
        ]
        return _concat_partials(parts)
    key = tower_local * stride + (ts - base)
    right = np.searchsorted(key, key + window, side="right")
    span = right - np.arange(n) - 1
    csum = np.cumsum(span)
    total = int(csum[-1])
    if total == 0:
        return empty

    parts = []
    lo = 0
    while lo < n:
        done = int(csum[lo - 1]) if lo else 0
        hi_idx = int(np.searchsorted(csum, done + chunk_pairs, side="right"))
        hi_idx = max(hi_idx, lo + 1)
        hi_idx = min(hi_idx, n)
        c = span[lo:hi_idx]
        m = int(c.sum())
        if m:
            i = np.repeat(np.arange(lo, hi_idx, dtype=np.int64), c)
            offsets = np.arange(m, dtype=np.int64) - np.repeat(np.cumsum(c) - c, c)
            j = i + 1 + offsets
            ui, uj = u[i], u[j]
            distinct = ui != uj
            i, j, ui, uj = i[distinct], j[distinct], ui[distinct], uj[distinct]
            if len(i):
                parts.append(
                    _merge_partials(
                        np.minimum(ui, uj),
                        np.maximum(ui, uj),
                        t[i],
                        ts[i],
                        ts[i],
                        ts[j],
                        np.ones(len(i), dtype=np.int64),
                        window,
                    )
                )
        lo = hi_idx
    return _concat_partials(parts)


def _empty_partials():
    i32 = np.empty(0, dtype=np.int32)
    i64 = np.empty(0, dtype=np.int64)
    return (i32, i32.copy(), i32.copy(), i64, i64.copy(), i64.copy(), i64.copy())


def _concat_partials(parts):
    if not parts:
        return _empty_partials()
    if len(parts) == 1:
        return parts[0]
    return tuple(np.concatenate(cols) for cols in zip(*parts))


def _partition_bounds(tower: np.ndarray, parts: int) -> list[tuple[int, int]]:
    n = len(tower)
    if n == 0:
        return []
    tower_starts = np.flatnonzero(np.concatenate([[True], tower[1:] != tower[:-1]]))
    cuts = [0]
    for k in range(1, parts):
        target = k * n // parts
        idx = int(np.searchsorted(tower_starts, target))
        if idx < len(tower_starts):
            cut = int(tower_starts[idx])
            if cut > cuts[-1]:
                cuts.append(cut)
    cuts.append(n)
    return [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


def detect_encounters_table(
    presence: PresenceTable,
    window_seconds: int,
    workers: int = 1,
    chunk_pairs: int = CHUNK_PAIRS,
) -> EpisodeTable:
    """Encounter episodes for a presence table.

    Output is identical for every ``workers`` and ``chunk_pairs`` value.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    window = int(window_seconds)
    workers = max(1, workers)
    # The pair budget is shared so peak memory does not grow with workers.
    chunk_pairs = max(1, chunk_pairs // workers)
    bounds = _partition_bounds(presence.tower, workers)
    args = (presence.tower, presence.time, presence.user)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _join_range(*args, b[0], b[1], window, chunk_pairs), bounds))
    else:
        parts = [_join_range(*args, a, b, window, chunk_pairs) for a, b in bounds]
    ua, ub, tw, lo_first, _lo_last, hi, count = _merge_partials(*_concat_partials(parts), window)
    table = EpisodeTable(presence.users, presence.towers, ua, ub, tw, lo_first, hi, count)
    return table.sorted()


def detect_encounters(
    events: Iterable[PresenceEvent],
    window_seconds: int = 3600,
    workers: int = 1,
) -> list[EncounterEpisode]:
    """Encounter episodes for presence events (duplicates are ignored)."""
    table = detect_encounters_table(PresenceTable.from_events(events), window_seconds, workers)
    return table.to_episodes()


def brute_force_encounters(events: Iterable[PresenceEvent], window_seconds: int = 3600) -> list[EncounterEpisode]:
    """Reference implementation examining every pair of events."""
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    unique = sorted(set(events))
    if len(unique) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} events, got {len(unique)}")
    raw: dict[tuple[PairKey, str], list[tuple[int, int]]] = defaultdict(list)
    for x in range(len(unique)):
        a = unique[x]
        for y in range(x + 1, len(unique)):
            b = unique[y]
            if a.tower_id != b.tower_id or a.user_id == b.user_id:
                continue
            if abs(a.timestamp - b.timestamp) <= window_seconds:
                lo, hi = sorted((a.timestamp, b.timestamp))
                raw[(PairKey.of(a.user_id, b.user_id), a.tower_id)].append((lo, hi))
    episodes = []
    for (pair, tower), occ in raw.items():
        occ.sort()
        first, last, n = occ[0][0], occ[0][1], 1
        prev = occ[0][0]
        for lo, hi in occ[1:]:
            if lo - prev > window_seconds:
                episodes.append(EncounterEpisode(pair, tower, first, last, n))
                first, last, n = lo, hi, 0
            last = max(last, hi)
            n += 1
            prev = lo
        episodes.append(EncounterEpisode(pair, tower, first, last, n))
    episodes.sort(key=EncounterEpisode.sort_key)
    return episodes


def pair_encounter_counts(episodes) -> dict[PairKey, int]:
    """Number of episodes per pair."""
    if isinstance(episodes, EpisodeTable):
        ua, ub, n = pair_counts_columns(episodes)
        users = episodes.users
        return {PairKey(users[a], users[b]): int(c) for a, b, c in zip(ua.tolist(), ub.tolist(), n.tolist())}
    counts: dict[PairKey, int] = defaultdict(int)
    for ep in episodes:
        counts[ep.pair] += 1
    return dict(counts)


def pair_counts_columns(table: EpisodeTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct pairs (sorted) and their episode counts."""
    if len(table) == 0:
        e = np.empty(0, dtype=np.int32)
        return e, e.copy(), np.empty(0, dtype=np.int64)
    ua, ub = table.ua, table.ub
    if not _pairs_sorted(ua, ub):
        order = np.lexsort((ub, ua))
        ua, ub = ua[order], ub[order]
    start = np.ones(len(ua), dtype=bool)
    start[1:] = (ua[1:] != ua[:-1]) | (ub[1:] != ub[:-1])
    idx = np.flatnonzero(start)
    counts = np.diff(np.append(idx, len(ua))).astype(np.int64)
    return ua[idx], ub[idx], counts


def _pairs_sorted(ua: np.ndarray, ub: np.ndarray) -> bool:
    if len(ua) < 2:
        return True
    da = np.diff(ua.astype(np.int64))
    return bool(np.all((da > 0) | ((da == 0) & (np.diff(ub.astype(np.int64)) >= 0))))
