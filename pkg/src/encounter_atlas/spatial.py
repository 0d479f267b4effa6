"""Spatial structure of repeated encounters.

Covers per-tower summaries, consecutive-encounter flows between towers,
the log-linear gravity fit ``T_ij = C * N_i**alpha * N_j**beta / D_ij**gamma``,
POI-category transition matrices and the tower-level re-encounter network.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cdr import Tower
from .encounters import EpisodeTable, as_episode_table

EARTH_RADIUS_KM = 6371.0
HOUR = 3600


class GravityFitError(ValueError):
    """Base class for fits that cannot be computed."""


class InsufficientDataError(GravityFitError):
    pass


class SingularFitError(GravityFitError):
    pass


def _num(x: float) -> str:
    """Locale-independent shortest round-trip formatting."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


# ---------------------------------------------------------------------------
# geometry


def haversine_km(a: Tower, b: Tower) -> float:
    """Great-circle distance on a sphere of radius 6371 km."""
    return float(haversine_array(a.latitude, a.longitude, b.latitude, b.longitude))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


# ---------------------------------------------------------------------------
# tower summary


@dataclass(frozen=True)
class TowerSummaryRow:
    tower_id: str
    total_encounters: int
    max_pair_count: int


def tower_summary(episodes) -> list[TowerSummaryRow]:
    """Episodes per tower and the largest per-pair episode count there."""
    table = as_episode_table(episodes)
    if len(table) == 0:
        return []
    total = np.bincount(table.tower, minlength=len(table.towers))
    order = np.lexsort((table.ub, table.ua, table.tower))
    t, a, b = table.tower[order], table.ua[order], table.ub[order]
    start = np.ones(len(t), dtype=bool)
    start[1:] = (t[1:] != t[:-1]) | (a[1:] != a[:-1]) | (b[1:] != b[:-1])
    idx = np.flatnonzero(start)
    group_size = np.diff(np.append(idx, len(t)))
    best = np.zeros(len(table.towers), dtype=np.int64)
    np.maximum.at(best, t[idx], group_size)
    return [
        TowerSummaryRow(table.towers[i], int(total[i]), int(best[i]))
        for i in np.flatnonzero(total)
    ]


def tower_summary_csv(rows: Sequence[TowerSummaryRow]) -> str:
    lines = ["tower_id,total_encounters,max_pair_count"]
    lines += [f"{r.tower_id},{r.total_encounters},{r.max_pair_count}" for r in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# flows


@dataclass
class FlowMatrix:
    """Ordered tower-to-tower flows plus per-tower popularity.

    ``origin``/``destination`` index into ``towers``; ``count`` is integer
    for empirical flows and real-valued for model-generated ones.
    """

    towers: list[str]
    origin: np.ndarray
    destination: np.ndarray
    count: np.ndarray
    popularity_counts: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def flows(self) -> dict[tuple[str, str], float]:
        t = self.towers
        return {
            (t[i], t[j]): _scalar(c)
            for i, j, c in zip(self.origin.tolist(), self.destination.tolist(), self.count.tolist())
        }

    @property
    def popularity(self) -> dict[str, float]:
        return {self.towers[i]: _scalar(self.popularity_counts[i]) for i in np.flatnonzero(self.popularity_counts)}

    def total_flow(self) -> float:
        return _scalar(self.count.sum())

    @classmethod
    def from_mappings(cls, flows: Mapping[tuple[str, str], float], popularity: Mapping[str, float]) -> "FlowMatrix":
        towers = sorted(set(popularity) | {o for o, _ in flows} | {d for _, d in flows})
        idx = {t: i for i, t in enumerate(towers)}
        items = sorted(flows.items())
        pop = np.zeros(len(towers))
        for t, n in popularity.items():
            pop[idx[t]] = n
        return cls(
            towers,
            np.array([idx[o] for (o, _), _ in items], dtype=np.int64),
            np.array([idx[d] for (_, d), _ in items], dtype=np.int64),
            np.array([c for _, c in items], dtype=np.float64),
            pop,
        )


def _scalar(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def _transition_index(table: EpisodeTable) -> tuple[np.ndarray, np.ndarray]:
    if len(table) < 2:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy()
    same = (table.ua[1:] == table.ua[:-1]) & (table.ub[1:] == table.ub[:-1])
    prev = np.flatnonzero(same)
    return prev, prev + 1


def consecutive_flows(episodes, popularity: str = "episodes") -> FlowMatrix:
    """Count tower-of-episode-k to tower-of-episode-k+1 transitions per pair.

    Popularity N_i is the number of episodes at tower i, or with
    ``popularity="cooccurrences"`` the number of raw co-occurrences there.
    """
    table = as_episode_table(episodes)
    n_towers = len(table.towers)
    if popularity == "episodes":
        pop = np.bincount(table.tower, minlength=n_towers).astype(np.int64)
    elif popularity == "cooccurrences":
        pop = np.bincount(table.tower, weights=table.count, minlength=n_towers).astype(np.int64)
    else:
        raise ValueError(f"unknown popularity measure {popularity!r}")
    prev, nxt = _transition_index(table)
    keys = table.tower[prev].astype(np.int64) * max(n_towers, 1) + table.tower[nxt]
    uniq, counts = np.unique(keys, return_counts=True)
    return FlowMatrix(
        list(table.towers),
        (uniq // max(n_towers, 1)).astype(np.int64),
        (uniq % max(n_towers, 1)).astype(np.int64),
        counts.astype(np.int64),
        pop,
        {"popularity": popularity},
    )


def _tower_coords(flows: FlowMatrix, towers: Mapping[str, Tower]) -> tuple[np.ndarray, np.ndarray]:
    missing = [t for t in flows.towers if t not in towers]
    if missing:
        raise KeyError(f"towers missing from tower table: {', '.join(missing[:5])}")
    lat = np.array([towers[t].latitude for t in flows.towers], dtype=np.float64)
    lon = np.array([towers[t].longitude for t in flows.towers], dtype=np.float64)
    return lat, lon


def flow_distances(flows: FlowMatrix, towers: Mapping[str, Tower]) -> np.ndarray:
    lat, lon = _tower_coords(flows, towers)
    return haversine_array(lat[flows.origin], lon[flows.origin], lat[flows.destination], lon[flows.destination])


def flows_csv(flows: FlowMatrix, towers: Mapping[str, Tower]) -> str:
    dist = flow_distances(flows, towers)
    lines = ["origin,destination,count,distance_km"]
    t = flows.towers
    for i, j, c, d in zip(flows.origin.tolist(), flows.destination.tolist(), flows.count.tolist(), dist.tolist()):
        lines.append(f"{t[i]},{t[j]},{_num(c)},{d!r}")
    return "\n".join(lines) + "\n"


def flow_distance_curve(flows: FlowMatrix, towers: Mapping[str, Tower], bin_km: float = 1.0) -> str:
    """Total flow per distance bin, for plotting only (not used by the fit)."""
    if bin_km <= 0:
        raise ValueError("bin_km must be positive")
    dist = flow_distances(flows, towers)
    lines = ["distance_bin_start_km,flow,cells"]
    if len(dist):
        bins = np.floor(dist / bin_km).astype(np.int64)
        total = np.bincount(bins, weights=flows.count.astype(np.float64))
        cells = np.bincount(bins)
        for b in np.flatnonzero(cells):
            lines.append(f"{_num(b * bin_km)},{_num(total[b])},{int(cells[b])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gravity fit


@dataclass(frozen=True)
class GravityFit:
    c_log: float
    alpha: float
    beta: float
    gamma: float
    r_squared: float
    points_used: int
    distance_floor_km: float = 0.1
    excluded: dict = field(default_factory=dict)

    @property
    def c(self) -> float:
        return math.exp(self.c_log)

    def to_json(self) -> str:
        data = asdict(self)
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def fit_gravity(flows: FlowMatrix, towers: Mapping[str, Tower], distance_floor_km: float = 0.1) -> GravityFit:
    """Least-squares fit of log T_ij = log C + a log N_i + b log N_j - g log D_ij.

    Cells enter the regression when T_ij, N_i and N_j are positive, the
    towers differ and their distance is at least ``distance_floor_km``.
    """
    dist = flow_distances(flows, towers)
    t = flows.count.astype(np.float64)
    ni = flows.popularity_counts[flows.origin].astype(np.float64)
    nj = flows.popularity_counts[flows.destination].astype(np.float64)
    self_loop = flows.origin == flows.destination
    zero = (t <= 0) | (ni <= 0) | (nj <= 0)
    near = ~self_loop & (dist < distance_floor_km)
    use = ~self_loop & ~zero & ~near
    if distance_floor_km <= 0:
        use &= dist > 0
    excluded = {
        "same_tower": int(self_loop.sum()),
        "zero_flow_or_popularity": int((zero & ~self_loop).sum()),
        "below_distance_floor": int((near & ~zero).sum()),
    }
    n = int(use.sum())
    if n < 4:
        raise InsufficientDataError(f"gravity fit needs at least 4 usable cells, got {n}")
    y = np.log(t[use])
    x = np.column_stack([np.ones(n), np.log(ni[use]), np.log(nj[use]), -np.log(dist[use])])
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularFitError("degenerate design: popularity or distance columns are collinear")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return GravityFit(
        c_log=float(coef[0]),
        alpha=float(coef[1]),
        beta=float(coef[2]),
        gamma=float(coef[3]),
        r_squared=float(min(1.0, max(0.0, r2))),
        points_used=n,
        distance_floor_km=float(distance_floor_km),
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# POI transitions


@dataclass
class PoiTransitionMatrix:
    categories: list[str]
    probabilities: np.ndarray  # rows: first-encounter category, cols: re-encounter category
    skipped: int = 0
    normalization: str = "row"

    def cell(self, origin: str, destination: str) -> float:
        i, j = self.categories.index(origin), self.categories.index(destination)
        return float(self.probabilities[i, j])

    def to_csv(self) -> str:
        lines = ["origin_poi,destination_poi,probability"]
        for i, a in enumerate(self.categories):
            for j, b in enumerate(self.categories):
                lines.append(f"{a},{b},{float(self.probabilities[i, j])!r}")
        return "\n".join(lines) + "\n"


def poi_transition_matrix(
    flows: FlowMatrix,
    towers: Mapping[str, Tower],
    normalization: str = "row",
) -> PoiTransitionMatrix:
    """Aggregate flows into POI-category pairs and normalize.

    Flows touching a tower without a category are skipped; ``skipped``
    counts the transitions dropped.
    """
    if normalization not in ("row", "global"):
        raise ValueError(f"unknown normalization {normalization!r}")
    cats = [towers[t].poi_category if t in towers else None for t in flows.towers]
    categories = sorted({c for c in cats if c})
    cidx = {c: i for i, c in enumerate(categories)}
    k = len(categories)
    code = np.array([cidx[c] if c else -1 for c in cats], dtype=np.int64)
    oc = code[flows.origin] if len(flows.origin) else np.empty(0, dtype=np.int64)
    dc = code[flows.destination] if len(flows.destination) else np.empty(0, dtype=np.int64)
    ok = (oc >= 0) & (dc >= 0)
    skipped = float(flows.count[~ok].sum()) if len(ok) else 0.0
    counts = np.zeros((k, k))
    np.add.at(counts, (oc[ok], dc[ok]), flows.count[ok].astype(np.float64))
    used = sorted(set(oc[ok].tolist()) | set(dc[ok].tolist()))
    if not used:
        return PoiTransitionMatrix([], np.zeros((0, 0)), int(skipped), normalization)
    counts = counts[np.ix_(used, used)]
    categories = [categories[i] for i in used]
    if normalization == "row":
        sums = counts.sum(axis=1, keepdims=True)
        probs = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    else:
        probs = counts / counts.sum()
    return PoiTransitionMatrix(categories, probs, int(skipped), normalization)


# ---------------------------------------------------------------------------
# re-encounter network

GAP_CLASSES = ("within_12h", "about_24h", "about_48h", "longer")


def classify_gap(seconds: float) -> str:
    if seconds <= 12 * HOUR:
        return "within_12h"
    if seconds <= 36 * HOUR:
        return "about_24h"
    if seconds <= 60 * HOUR:
        return "about_48h"
    return "longer"


@dataclass(frozen=True)
class ReencounterEdge:
    tower_i: str
    tower_j: str
    pair_count: int
    median_gap_seconds: float
    gap_class: str


@dataclass
class ReencounterNetwork:
    edges: list[ReencounterEdge]
    min_edge_pairs: int

    def to_csv(self) -> str:
        lines = ["tower_i,tower_j,pair_count,median_gap_s,gap_class"]
        for e in self.edges:
            lines.append(f"{e.tower_i},{e.tower_j},{e.pair_count},{_num(e.median_gap_seconds)},{e.gap_class}")
        return "\n".join(lines) + "\n"


def reencounter_network(episodes, min_edge_pairs: int = 2000) -> ReencounterNetwork:
    """Undirected tower links from consecutive episodes, thresholded by count."""
    if min_edge_pairs < 0:
        raise ValueError("min_edge_pairs must be >= 0")
    table = as_episode_table(episodes)
    prev, nxt = _transition_index(table)
    if len(prev) == 0:
        return ReencounterNetwork([], min_edge_pairs)
    n = max(len(table.towers), 1)
    a, b = table.tower[prev].astype(np.int64), table.tower[nxt].astype(np.int64)
    keys = np.minimum(a, b) * n + np.maximum(a, b)
    gaps = table.first[nxt] - table.first[prev]
    order = np.lexsort((gaps, keys))
    keys, gaps = keys[order], gaps[order]
    starts = np.flatnonzero(np.concatenate([[True], keys[1:] != keys[:-1]]))
    sizes = np.diff(np.append(starts, len(keys)))
    lo = gaps[starts + (sizes - 1) // 2]
    hi = gaps[starts + sizes // 2]
    medians = (lo + hi) / 2.0
    edges = []
    for s, size, med in zip(starts.tolist(), sizes.tolist(), medians.tolist()):
        if size < min_edge_pairs:
            continue
        key = int(keys[s])
        edges.append(
            ReencounterEdge(table.towers[key // n], table.towers[key % n], size, med, classify_gap(med))
        )
    return ReencounterNetwork(edges, min_edge_pairs)
