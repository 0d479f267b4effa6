"""Communication graph, degree filter, familiar strangers and social distance."""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import polars as pl
from scipy import sparse, stats
from scipy.sparse import csgraph

from .cdr import CallRecord, CdrFrame
from .codes import build_vocab, encode
from .encounters import PairKey


class _Disconnected:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Disconnected"

    def __reduce__(self):
        return (_Disconnected, ())


DISCONNECTED = _Disconnected()
Distance = Union[int, _Disconnected]


class UnknownUserError(KeyError):
    pass


@dataclass
class CommGraph:
    """Undirected, unweighted contact graph over integer-coded users.

    ``users`` is the sorted identifier vocabulary; ``alive`` marks which of
    them are vertices (users dropped by the degree filter are not).
    ``ea < eb`` holds each edge once, sorted.
    """

    users: list[str]
    alive: np.ndarray
    ea: np.ndarray
    eb: np.ndarray
    removed: frozenset = frozenset()

    def __post_init__(self) -> None:
        self._index: Optional[dict[str, int]] = None
        self._csr: Optional[sparse.csr_matrix] = None

    @property
    def n(self) -> int:
        return len(self.users)

    @property
    def vertices(self) -> set[str]:
        return {self.users[i] for i in np.flatnonzero(self.alive)}

    @property
    def edges(self) -> set[PairKey]:
        u = self.users
        return {PairKey(u[a], u[b]) for a, b in zip(self.ea.tolist(), self.eb.tolist())}

    @property
    def degree_array(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.ea, self.eb]), minlength=self.n).astype(np.int64)

    @property
    def degree(self) -> dict[str, int]:
        deg = self.degree_array
        return {self.users[i]: int(deg[i]) for i in np.flatnonzero(self.alive)}

    def code(self, user: str) -> int:
        if self._index is None:
            self._index = {u: i for i, u in enumerate(self.users)}
        idx = self._index.get(user)
        if idx is None or not self.alive[idx]:
            raise UnknownUserError(user)
        return idx

    def has_edge(self, a: str, b: str) -> bool:
        return bool(is_edge(self, np.array([self.code(a)]), np.array([self.code(b)]))[0])

    def csr(self) -> sparse.csr_matrix:
        if self._csr is None:
            rows = np.concatenate([self.ea, self.eb])
            cols = np.concatenate([self.eb, self.ea])
            data = np.ones(len(rows), dtype=np.int8)
            self._csr = sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
            self._csr.sort_indices()
        return self._csr

    def edge_keys(self) -> np.ndarray:
        return self.ea.astype(np.int64) * self.n + self.eb.astype(np.int64)


def _from_code_edges(users: list[str], a: np.ndarray, b: np.ndarray) -> CommGraph:
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    n = len(users)
    keys = np.unique(lo * n + hi)
    ea = (keys // n).astype(np.int32) if n else keys.astype(np.int32)
    eb = (keys % n).astype(np.int32) if n else keys.astype(np.int32)
    return CommGraph(list(users), np.ones(n, dtype=bool), ea, eb)


def build_comm_graph(records: Union[CdrFrame, Sequence[CallRecord]], users: Optional[list[str]] = None) -> CommGraph:
    """One undirected edge per distinct contacted pair.

    ``users`` optionally supplies a sorted vocabulary that must cover every
    identifier in ``records``; by default the record identifiers are used.
    """
    if isinstance(records, CdrFrame):
        df = records.frame
        callers, callees = df["caller_id"], df["callee_id"]
    else:
        recs = list(records)
        callers = pl.Series([r.caller_id for r in recs], dtype=pl.Utf8)
        callees = pl.Series([r.callee_id for r in recs], dtype=pl.Utf8)
    vocab = build_vocab(callers, callees) if users is None else pl.Series(users, dtype=pl.Utf8)
    graph = _from_code_edges(vocab.to_list(), encode(callers, vocab), encode(callees, vocab))
    if users is not None:
        # Users only known from other sources are not vertices of this graph.
        deg = graph.degree_array
        graph.alive = deg > 0
    return graph


def filter_high_degree(graph: CommGraph, max_degree: int) -> tuple[CommGraph, set[str]]:
    """Drop vertices whose original degree exceeds ``max_degree`` (one pass)."""
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    deg = graph.degree_array
    drop = graph.alive & (deg > max_degree)
    removed = {graph.users[i] for i in np.flatnonzero(drop)}
    keep_edge = ~(drop[graph.ea] | drop[graph.eb])
    filtered = CommGraph(
        graph.users,
        graph.alive & ~drop,
        graph.ea[keep_edge],
        graph.eb[keep_edge],
        frozenset(graph.removed | removed),
    )
    return filtered, removed


def is_edge(graph: CommGraph, ua: np.ndarray, ub: np.ndarray) -> np.ndarray:
    lo = np.minimum(ua, ub).astype(np.int64)
    hi = np.maximum(ua, ub).astype(np.int64)
    keys = lo * graph.n + hi
    edge_keys = graph.edge_keys()
    if len(edge_keys) == 0:
        return np.zeros(len(keys), dtype=bool)
    pos = np.searchsorted(edge_keys, keys)
    pos = np.minimum(pos, len(edge_keys) - 1)
    return edge_keys[pos] == keys


@dataclass(frozen=True)
class FamiliarStrangerPair:
    pair: PairKey
    encounter_count: int
    social_distance: Optional[Distance] = None


def familiar_mask(graph: CommGraph, ua: np.ndarray, ub: np.ndarray, removed_codes: Optional[np.ndarray] = None) -> np.ndarray:
    """Which coded pairs are familiar strangers with respect to ``graph``."""
    mask = ~is_edge(graph, ua, ub)
    dropped = np.zeros(graph.n, dtype=bool)
    if removed_codes is not None:
        dropped[removed_codes] = True
    elif graph.removed:
        index = {u: i for i, u in enumerate(graph.users)}
        dropped[[index[u] for u in graph.removed if u in index]] = True
    return mask & ~dropped[ua] & ~dropped[ub]


def familiar_stranger_pairs(
    counts: Mapping[PairKey, int],
    graph: CommGraph,
    removed: Iterable[str] = (),
) -> list[FamiliarStrangerPair]:
    """Encountering pairs with no edge in ``graph`` and no removed member."""
    excluded = set(removed) | set(graph.removed)
    index = {u: i for i, u in enumerate(graph.users)}
    out = []
    for pair, count in sorted(counts.items()):
        if count < 1 or pair.user_a in excluded or pair.user_b in excluded:
            continue
        a, b = index.get(pair.user_a), index.get(pair.user_b)
        if a is not None and b is not None and is_edge(graph, np.array([a]), np.array([b]))[0]:
            continue
        out.append(FamiliarStrangerPair(pair, count))
    return out


def social_distance(graph: CommGraph, pair: PairKey) -> Distance:
    """Hop count of the shortest path between the two users (breadth-first)."""
    src, dst = graph.code(pair.user_a), graph.code(pair.user_b)
    if src == dst:
        return 0
    csr = graph.csr()
    indptr, indices = csr.indptr, csr.indices
    seen = {src}
    frontier = deque([(src, 0)])
    while frontier:
        node, dist = frontier.popleft()
        for nb in indices[indptr[node] : indptr[node + 1]].tolist():
            if nb == dst:
                return dist + 1
            if nb not in seen:
                seen.add(nb)
                frontier.append((nb, dist + 1))
    return DISCONNECTED


def batch_distances(graph: CommGraph, ua: np.ndarray, ub: np.ndarray, max_cells: int = 20_000_000) -> np.ndarray:
    """Hop distances for many coded pairs; -1 marks disconnected pairs.

    Queries are grouped by connected component and by source vertex, so
    one traversal serves every target of that source.
    """
    ua = np.asarray(ua, dtype=np.int64)
    ub = np.asarray(ub, dtype=np.int64)
    out = np.full(len(ua), -1, dtype=np.int64)
    if len(ua) == 0:
        return out
    csr = graph.csr()
    _, labels = csgraph.connected_components(csr, directed=False)
    same = (labels[ua] == labels[ub]) & graph.alive[ua] & graph.alive[ub]
    out[same & (ua == ub)] = 0
    q = np.flatnonzero(same & (ua != ub))
    if len(q) == 0:
        return out

    order = np.argsort(labels, kind="stable")
    sizes = np.bincount(labels)
    comp_start = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    position = np.empty(graph.n, dtype=np.int64)
    position[order] = np.arange(graph.n)
    permuted = csr[order][:, order].tocsr()
    local = position - comp_start[labels]

    q = q[np.lexsort((ua[q], labels[ua[q]]))]
    q_comp = labels[ua[q]]
    cut = np.flatnonzero(np.diff(q_comp)) + 1
    for block in np.split(q, cut):
        comp = labels[ua[block[0]]]
        s, size = int(comp_start[comp]), int(sizes[comp])
        sub = permuted[s : s + size, s : s + size]
        src_local = local[ua[block]]
        sources, inverse = np.unique(src_local, return_inverse=True)
        per_chunk = max(1, max_cells // size)
        for start in range(0, len(sources), per_chunk):
            chunk = sources[start : start + per_chunk]
            dist = csgraph.shortest_path(sub, method="D", directed=False, unweighted=True, indices=chunk)
            dist = np.atleast_2d(dist)
            sel = (inverse >= start) & (inverse < start + len(chunk))
            rows = inverse[sel] - start
            out[block[sel]] = dist[rows, local[ub[block[sel]]]].astype(np.int64)
    return out


def fill_distances(pairs: Sequence[FamiliarStrangerPair], graph: CommGraph) -> list[FamiliarStrangerPair]:
    """Populate ``social_distance`` on every pair; unknown users count as disconnected."""
    index = {u: i for i, u in enumerate(graph.users)}
    ua = np.array([index.get(p.pair.user_a, -1) for p in pairs], dtype=np.int64)
    ub = np.array([index.get(p.pair.user_b, -1) for p in pairs], dtype=np.int64)
    known = (ua >= 0) & (ub >= 0)
    dist = np.full(len(pairs), -1, dtype=np.int64)
    dist[known] = batch_distances(graph, ua[known], ub[known])
    return [
        dataclasses.replace(p, social_distance=int(d) if d >= 0 else DISCONNECTED)
        for p, d in zip(pairs, dist.tolist())
    ]


# ---------------------------------------------------------------------------
# distance curve


Bucket = tuple[int, Optional[int]]


def parse_buckets(spec: str) -> list[Bucket]:
    """Parse ``"1,2,3,4,5-9,10+"`` into ordered, disjoint inclusive ranges."""
    buckets: list[Bucket] = []
    for token in spec.split(","):
        token = token.strip()
        try:
            if token.endswith("+"):
                bucket = (int(token[:-1]), None)
            elif "-" in token:
                lo, hi = token.split("-", 1)
                bucket = (int(lo), int(hi))
            else:
                bucket = (int(token), int(token))
        except ValueError as exc:
            raise ValueError(f"bad bucket {token!r}") from exc
        if bucket[0] < 1 or (bucket[1] is not None and bucket[1] < bucket[0]):
            raise ValueError(f"bad bucket {token!r}")
        if buckets:
            prev_hi = buckets[-1][1]
            if prev_hi is None or bucket[0] <= prev_hi:
                raise ValueError("buckets must be ordered and disjoint")
        buckets.append(bucket)
    if not buckets:
        raise ValueError("empty bucket specification")
    return buckets


@dataclass(frozen=True)
class CurveRow:
    bucket_lo: int
    bucket_hi: Optional[int]
    pair_count: int
    mean_social_distance: float
    disconnected_fraction: float


@dataclass
class DistanceCurve:
    rows: list[CurveRow]
    note: str = ""

    def to_csv(self) -> str:
        lines = ["bucket_lo,bucket_hi,pair_count,mean_distance,disconnected_fraction"]
        for r in self.rows:
            hi = "" if r.bucket_hi is None else str(r.bucket_hi)
            mean = "" if np.isnan(r.mean_social_distance) else _fmt(r.mean_social_distance)
            frac = "" if np.isnan(r.disconnected_fraction) else _fmt(r.disconnected_fraction)
            lines.append(f"{r.bucket_lo},{hi},{r.pair_count},{mean},{frac}")
        if self.note:
            lines.append(f"# {self.note}")
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def curve_from_arrays(counts: np.ndarray, distances: np.ndarray, buckets: Sequence[Bucket]) -> DistanceCurve:
    """Distance curve from encounter counts and distances (-1 = disconnected)."""
    counts = np.asarray(counts, dtype=np.int64)
    distances = np.asarray(distances, dtype=np.int64)
    if len(counts) == 0:
        return DistanceCurve([], note="no familiar-stranger pairs")
    covered = np.zeros(len(counts), dtype=bool)
    rows = []
    for lo, hi in buckets:
        sel = counts >= lo
        if hi is not None:
            sel &= counts <= hi
        covered |= sel
        n = int(sel.sum())
        d = distances[sel]
        connected = d[d >= 0]
        mean = float(connected.mean()) if len(connected) else float("nan")
        frac = float((d < 0).sum() / n) if n else float("nan")
        rows.append(CurveRow(lo, hi, n, mean, frac))
    if not covered.all():
        missing = sorted(set(counts[~covered].tolist()))[:5]
        raise ValueError(f"bucketing does not cover encounter counts {missing}")
    return DistanceCurve(rows)


def distance_curve(
    pairs: Sequence[FamiliarStrangerPair],
    graph: CommGraph,
    bucketing: Union[str, Sequence[Bucket]] = "1,2,3,4,5-9,10+",
) -> DistanceCurve:
    """Mean hop distance and disconnected fraction per encounter-count bucket."""
    buckets = parse_buckets(bucketing) if isinstance(bucketing, str) else list(bucketing)
    if any(p.social_distance is None for p in pairs):
        pairs = fill_distances(pairs, graph)
    counts = np.array([p.encounter_count for p in pairs], dtype=np.int64)
    dist = np.array(
        [-1 if p.social_distance is DISCONNECTED else p.social_distance for p in pairs],
        dtype=np.int64,
    )
    return curve_from_arrays(counts, dist, buckets)


def encounter_distance_spearman(counts: np.ndarray, distances: np.ndarray) -> float:
    """Spearman rank correlation over connected pairs (NaN if undefined)."""
    counts = np.asarray(counts)
    distances = np.asarray(distances)
    keep = distances >= 0
    if keep.sum() < 3:
        return float("nan")
    rho = stats.spearmanr(counts[keep], distances[keep]).statistic
    return float(rho)
