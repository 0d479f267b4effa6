"""Seeded synthetic CDR generation with planted ground truth.

All randomness comes from one ``numpy.random.Generator`` over the PCG64
bit generator seeded with the scenario seed, and draws happen in a fixed
order, so a scenario always yields the same bytes.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
import polars as pl

from ..cdr import CallRecord, CdrFrame, Tower
from ..spatial import FlowMatrix, haversine_array
from .scenario import GravityParams, ScenarioConfig, ScenarioError

DAY = 86_400
# Two hours between flow-realising meetings at the same tower keeps them
# out of each other's co-location window for windows below two hours.
FLOW_SLOT_SECONDS = 7_200
CALL_SECONDS = (30, 600)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed % 2**64))


def _expected_calls(rng: np.random.Generator, lam: np.ndarray) -> np.ndarray:
    """Integer call counts with mean ``lam`` and minimal variance."""
    base = np.floor(lam)
    return (base + (rng.random(len(lam)) < lam - base)).astype(np.int64)


def _contact_csr(config: ScenarioConfig, index: dict[str, int]) -> tuple[np.ndarray, np.ndarray]:
    indptr = [0]
    indices: list[int] = []
    for agent in config.agents:
        members = sorted(index[c] for c in agent.contact_set)
        indices.extend(members)
        indptr.append(len(indices))
    return np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)


def _slots(config: ScenarioConfig, tower_index: dict[str, int]):
    """Active (agent, tower, window) slots in agent, entry, day order."""
    start = config.start_epoch()
    day_idx = np.arange(config.days, dtype=np.int64)
    dow = (np.datetime64(config.start_date, "D").astype("datetime64[D]").astype(np.int64) + 3 + day_idx) % 7
    agents, towers, begins, lengths, rates = [], [], [], [], []
    cache: dict[frozenset[int], np.ndarray] = {}
    for a, agent in enumerate(config.agents):
        if not agent.contact_set or agent.call_rate == 0:
            continue
        for entry in agent.schedule:
            days = cache.get(entry.days)
            if days is None:
                days = day_idx[np.isin(dow, sorted(entry.days))]
                cache[entry.days] = days
            if len(days) == 0:
                continue
            agents.append(np.full(len(days), a, dtype=np.int64))
            towers.append(np.full(len(days), tower_index[entry.tower_id], dtype=np.int64))
            begins.append(start + days * DAY + entry.start_minute * 60)
            lengths.append(np.full(len(days), (entry.end_minute - entry.start_minute) * 60, dtype=np.int64))
            rates.append(np.full(len(days), agent.call_rate * entry.hours))
    if not agents:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), e.copy(), e.copy(), np.empty(0)
    return (
        np.concatenate(agents),
        np.concatenate(towers),
        np.concatenate(begins),
        np.concatenate(lengths),
        np.concatenate(rates),
    )


def _agent_calls(config: ScenarioConfig, rng: np.random.Generator, tower_index: dict[str, int]):
    index = {a.agent_id: i for i, a in enumerate(config.agents)}
    indptr, indices = _contact_csr(config, index)
    slot_agent, slot_tower, slot_begin, slot_len, slot_lam = _slots(config, tower_index)
    n_calls = _expected_calls(rng, slot_lam)
    total = int(n_calls.sum())
    caller = np.repeat(slot_agent, n_calls)
    tower = np.repeat(slot_tower, n_calls)
    offset = np.floor(rng.random(total) * np.repeat(slot_len, n_calls)).astype(np.int64)
    jitter_max = np.array([a.jitter_seconds for a in config.agents], dtype=np.int64)
    j = jitter_max[caller] if total else np.empty(0, dtype=np.int64)
    jitter = np.floor(rng.random(total) * (2 * j + 1)).astype(np.int64) - j
    start = np.maximum(np.repeat(slot_begin, n_calls) + offset + jitter, 0)
    duration = rng.integers(CALL_SECONDS[0], CALL_SECONDS[1] + 1, size=total)

    # Recipients cycle through a random permutation of each caller's
    # contacts, so every contact is reached before any is repeated.
    nnz = len(indices)
    owner = np.repeat(np.arange(len(config.agents)), np.diff(indptr))
    perm = np.lexsort((rng.random(nnz), owner)) if nnz else np.empty(0, dtype=np.int64)
    shuffled = indices[perm]
    ordinal = np.arange(total) - np.repeat(_group_starts(caller), _group_sizes(caller)) if total else caller
    degree = np.diff(indptr)
    callee = shuffled[indptr[caller] + ordinal % np.maximum(degree[caller], 1)] if total else caller
    names = [a.agent_id for a in config.agents]
    return caller, callee, tower, start, start + duration, names


def _group_starts(sorted_keys: np.ndarray) -> np.ndarray:
    if len(sorted_keys) == 0:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(np.concatenate([[True], sorted_keys[1:] != sorted_keys[:-1]]))


def _group_sizes(sorted_keys: np.ndarray) -> np.ndarray:
    starts = _group_starts(sorted_keys)
    return np.diff(np.append(starts, len(sorted_keys)))


# ---------------------------------------------------------------------------
# gravity flows


def _tower_arrays(towers: Mapping[str, Tower], ids: list[str]) -> tuple[np.ndarray, np.ndarray]:
    lat = np.array([towers[t].latitude for t in ids], dtype=np.float64)
    lon = np.array([towers[t].longitude for t in ids], dtype=np.float64)
    return lat, lon


def generate_gravity_flows(
    towers: Mapping[str, Tower],
    popularity: Mapping[str, float],
    params: GravityParams | tuple,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> FlowMatrix:
    """Real-valued flows ``C * N_i**alpha * N_j**beta / D_ij**gamma`` for i != j.

    With ``noise_sigma > 0`` each cell is multiplied by ``exp(eps)``,
    ``eps ~ Normal(0, noise_sigma**2)``.
    """
    if not isinstance(params, GravityParams):
        params = GravityParams(*params)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    ids = sorted(popularity)
    missing = [t for t in ids if t not in towers]
    if missing:
        raise ScenarioError(f"popularity for unknown tower {missing[0]!r}")
    pop = np.array([popularity[t] for t in ids], dtype=np.float64)
    if np.any(pop <= 0):
        raise ValueError("popularity values must be positive")
    lat, lon = _tower_arrays(towers, ids)
    n = len(ids)
    oi, dj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = oi != dj
    oi, dj = oi[off], dj[off]
    dist = haversine_array(lat[oi], lon[oi], lat[dj], lon[dj])
    if n < 2 or np.all(dist == 0):
        raise ScenarioError("degenerate geometry: all towers co-located")
    if np.any(dist == 0):
        raise ScenarioError("degenerate geometry: distinct towers share coordinates")
    flow = params.c * pop[oi] ** params.alpha * pop[dj] ** params.beta / dist**params.gamma
    if noise_sigma > 0:
        flow = flow * np.exp(make_rng(seed).normal(0.0, noise_sigma, size=len(flow)))
    return FlowMatrix(ids, oi.astype(np.int64), dj.astype(np.int64), flow, pop, {"params": params})


def _flow_calls(config: ScenarioConfig, rng: np.random.Generator, tower_index: dict[str, int]):
    """Records realising gravity flows through dedicated user pairs.

    Each unit of flow i->j is one pair of users meeting at tower i and a
    second later at tower j. Extra single meetings top every tower up to
    its planted popularity, so the episode count at tower i is exactly the
    planted N_i. Meetings are laid out in rounds so that no tower hosts two
    meetings closer than ``FLOW_SLOT_SECONDS``.
    """
    params = config.gravity_params
    flows = generate_gravity_flows(config.towers, config.popularity, params, params.noise_sigma, config.seed)
    counts = np.rint(flows.count).astype(np.int64)
    n = len(flows.towers)
    usage = np.zeros(n, dtype=np.int64)
    np.add.at(usage, flows.origin, counts)
    np.add.at(usage, flows.destination, counts)
    target = np.array([config.popularity[t] for t in flows.towers], dtype=np.int64)
    filler = target - usage
    if np.any(filler < 0):
        bad = flows.towers[int(np.argmin(filler))]
        raise ScenarioError(f"gravity flows exceed planted popularity at tower {bad!r}; lower c")

    units: list[tuple[int, int]] = []
    for i, j, c in zip(flows.origin.tolist(), flows.destination.tolist(), counts.tolist()):
        units.extend([(i, j)] * c)
    for i, f in enumerate(filler.tolist()):
        units.extend([(i, -1)] * f)
    order = rng.permutation(len(units))

    next_free = np.zeros(n, dtype=np.int64)
    rounds = np.empty(len(units), dtype=np.int64)
    for k in order.tolist():
        i, j = units[k]
        r = next_free[i] if j < 0 else max(next_free[i], next_free[j])
        rounds[k] = r
        next_free[i] = r + 1
        if j >= 0:
            next_free[j] = r + 1

    base = config.start_epoch()
    callers, callees, towers, starts = [], [], [], []
    names: list[str] = []
    for k, (i, j) in enumerate(units):
        t0 = base + int(rounds[k]) * FLOW_SLOT_SECONDS
        a, b = f"G{k:07d}a", f"G{k:07d}b"
        ca, cb = f"H{k:07d}a", f"H{k:07d}b"
        for who, whom in ((a, ca), (b, cb)):
            callers.append(who)
            callees.append(whom)
            towers.append(flows.towers[i])
            starts.append(t0)
            if j >= 0:
                callers.append(who)
                callees.append(whom)
                towers.append(flows.towers[j])
                starts.append(t0 + 1)
    start = np.asarray(starts, dtype=np.int64)
    duration = rng.integers(CALL_SECONDS[0], CALL_SECONDS[1] + 1, size=len(start))
    return callers, callees, towers, start, start + duration, counts


# ---------------------------------------------------------------------------


def generate_cdr_frame(config: ScenarioConfig) -> CdrFrame:
    """Columnar call records for a scenario, sorted by start time."""
    config.validate()
    rng = make_rng(config.seed)
    tower_ids = list(config.towers)
    tower_index = {t: i for i, t in enumerate(tower_ids)}
    caller, callee, tower, start, end, names = _agent_calls(config, rng, tower_index)
    name_s = pl.Series(names, dtype=pl.Utf8)
    tower_s = pl.Series(tower_ids, dtype=pl.Utf8)
    frame = pl.DataFrame(
        {
            "caller_id": name_s.gather(caller) if len(caller) else pl.Series([], dtype=pl.Utf8),
            "callee_id": name_s.gather(callee) if len(callee) else pl.Series([], dtype=pl.Utf8),
            "tower_id": tower_s.gather(tower) if len(tower) else pl.Series([], dtype=pl.Utf8),
            "start_time": start.astype(np.int64),
            "end_time": end.astype(np.int64),
        }
    )
    if config.gravity_params is not None:
        gc, ge, gt, gs, gend, _ = _flow_calls(config, rng, tower_index)
        extra = pl.DataFrame(
            {"caller_id": gc, "callee_id": ge, "tower_id": gt, "start_time": gs, "end_time": gend},
            schema=frame.schema,
        )
        frame = pl.concat([frame, extra])
    frame = frame.sort(["start_time", "caller_id", "callee_id", "tower_id", "end_time"])
    return CdrFrame(frame, [])


def generate_cdr(config: ScenarioConfig) -> list[CallRecord]:
    return generate_cdr_frame(config).to_records()


def write_cdr_frame(frame: CdrFrame, path) -> None:
    frame.frame.write_csv(path, include_header=False, line_terminator="\n")
