"""Built-in scenarios, each a minimal construct proving one property.

The small presets ship as scenario files next to this module and are
regenerated from the builders below; ``scale`` is built on demand.
"""

from __future__ import annotations

from importlib import resources
from typing import Callable

import numpy as np

from ..cdr import Tower
from .generator import generate_gravity_flows, make_rng
from .scenario import AgentSpec, GravityParams, ScenarioConfig, ScheduleEntry, parse_scenario

POIS = ("food", "culture", "stadium", "event", "wellness", "nature")
ALL_DAYS = frozenset(range(7))
WEEKDAYS = frozenset(range(5))
WEEKEND = frozenset((5, 6))

# Andorra la Vella area, used only to give towers plausible coordinates.
_LAT0, _LON0 = 42.50, 1.50


def _grid_towers(n: int, cols: int, step_lat: float, step_lon: float, prefix: str = "T") -> dict[str, Tower]:
    towers = {}
    width = len(str(n))
    for k in range(n):
        r, c = divmod(k, cols)
        tid = f"{prefix}{k + 1:0{width}d}"
        towers[tid] = Tower(tid, round(_LAT0 + r * step_lat, 6), round(_LON0 + c * step_lon, 6), POIS[k % len(POIS)])
    return towers


def _entry(days: frozenset[int], start_minute: int, minutes: int, tower: str) -> ScheduleEntry:
    return ScheduleEntry(days, start_minute, start_minute + minutes, tower)


def commuters(seed: int = 20160704) -> ScenarioConfig:
    """Daily routines: commuters meet at work every morning, family at home every evening."""
    towers = _grid_towers(6, 3, 0.02, 0.03)
    ids = list(towers)
    work, home = ids[:3], ids[3:]
    agents = []
    per_site = 12
    for s in range(3):
        for k in range(per_site):
            c, f = f"C{s}{k:02d}", f"F{s}{k:02d}"
            agents.append(
                AgentSpec(c, home[s], work[s], (_entry(ALL_DAYS, 8 * 60, 60, work[s]),), 1.0, frozenset({f}), 1800)
            )
            agents.append(
                AgentSpec(f, home[s], home[s], (_entry(ALL_DAYS, 19 * 60, 60, home[s]),), 1.0, frozenset({c}), 1800)
            )
    return ScenarioConfig(
        towers,
        agents,
        days=7,
        tz_offset=2.0,
        seed=seed,
        name="commuters",
        truths={"period_hours": "24", "jitter_seconds": "1800", "pairs_per_site": str(per_site * (per_site - 1) // 2)},
    )


def weekend_crowd(seed: int = 20160709) -> ScenarioConfig:
    """Two disjoint populations: weekday-only office workers and weekend-only visitors."""
    towers = _grid_towers(4, 2, 0.02, 0.03)
    ids = list(towers)
    agents = []
    for k in range(24):
        site = ids[k % 2]
        agents.append(
            AgentSpec(f"D{k:02d}", site, site, (_entry(WEEKDAYS, 9 * 60, 60, site),), 1.0, frozenset({f"X{k:02d}"}), 900)
        )
        leisure = ids[2 + k % 2]
        agents.append(
            AgentSpec(f"E{k:02d}", leisure, leisure, (_entry(WEEKEND, 11 * 60, 60, leisure),), 1.0, frozenset({f"Y{k:02d}"}), 900)
        )
        agents.append(AgentSpec(f"X{k:02d}", site, site))
        agents.append(AgentSpec(f"Y{k:02d}", leisure, leisure))
    return ScenarioConfig(
        towers,
        agents,
        days=14,
        seed=seed,
        name="weekend-crowd",
        truths={"weekday_group": "D*", "weekend_group": "E*", "cross_group_pairs": "0"},
    )


def overlap(seed: int = 20160711, pairs: int = 50, contact_fraction: float = 0.2) -> ScenarioConfig:
    """Planted meeting pairs, a fixed fraction of which also call each other.

    Every pair owns a private (tower, hour) slot, so the encountering pairs
    are exactly the planted ones.
    """
    towers = _grid_towers(10, 5, 0.02, 0.03)
    ids = list(towers)
    hours = (8, 10, 12, 14, 16)
    if pairs > len(ids) * len(hours):
        raise ValueError("not enough private slots")
    n_contact = int(round(pairs * contact_fraction))
    rng = make_rng(seed)
    linked = set(rng.choice(pairs, size=n_contact, replace=False).tolist())
    agents = []
    for k in range(pairs):
        tower, hour = ids[k % len(ids)], hours[k // len(ids)]
        a, b = f"P{k:03d}a", f"P{k:03d}b"
        entry = (_entry(ALL_DAYS, hour * 60, 30, tower),)
        if k in linked:
            ca, cb = frozenset({b}), frozenset({a})
        else:
            ca, cb = frozenset({f"Q{k:03d}a"}), frozenset({f"Q{k:03d}b"})
            agents.append(AgentSpec(f"Q{k:03d}a", tower, tower))
            agents.append(AgentSpec(f"Q{k:03d}b", tower, tower))
        agents.append(AgentSpec(a, tower, tower, entry, 2.0, ca, 300))
        agents.append(AgentSpec(b, tower, tower, entry, 2.0, cb, 300))
    return ScenarioConfig(
        towers,
        agents,
        days=3,
        seed=seed,
        name="overlap",
        truths={
            "encountering_pairs": str(pairs),
            "contact_pairs": str(n_contact),
            "familiar_pairs": str(pairs - n_contact),
            "linked": " ".join(f"P{k:03d}" for k in sorted(linked)),
        },
    )


def gravity_grid(seed: int = 20160716, params: tuple = (0.38, 0.407, 0.823), usage: float = 0.7) -> ScenarioConfig:
    """Twenty towers on a grid whose consecutive-encounter flows follow the gravity law."""
    towers = _grid_towers(20, 5, 0.03, 0.04)
    rng = make_rng(seed)
    popularity = {t: int(p) for t, p in zip(towers, rng.integers(600, 1501, size=len(towers)))}
    alpha, beta, gamma = params
    unit = generate_gravity_flows(towers, popularity, (1.0, alpha, beta, gamma))
    load = np.zeros(len(unit.towers))
    np.add.at(load, unit.origin, unit.count)
    np.add.at(load, unit.destination, unit.count)
    c = float(np.round(usage * np.min(unit.popularity_counts / load), 6))
    return ScenarioConfig(
        towers,
        [],
        days=1,
        seed=seed,
        gravity_params=GravityParams(c, alpha, beta, gamma, 0.0),
        popularity=popularity,
        name="gravity-grid",
        truths={"alpha": repr(alpha), "beta": repr(beta), "gamma": repr(gamma), "c": repr(c)},
    )


def social_decay(seed: int = 20160718, n_agents: int = 60, per_distance: int = 15, max_distance: int = 7) -> ScenarioConfig:
    """Ring-lattice contact graph; pairs further apart meet on fewer days.

    Agents i and j are contacts when their ring offset is 1 or 2, so the hop
    distance is ceil(offset / 2). Pairs at distance d meet on max(1, 8 - d)
    days per week, each meeting in a private (tower, weekday, hour) slot.
    """
    towers = _grid_towers(10, 5, 0.02, 0.03)
    tower_ids = list(towers)
    hours = list(range(6, 22, 2))
    rng = make_rng(seed)
    names = [f"S{i:03d}" for i in range(n_agents)]
    contacts = {i: frozenset(names[(i + o) % n_agents] for o in (-2, -1, 1, 2)) for i in range(n_agents)}

    free = [(t, d, h) for t in range(len(tower_ids)) for d in range(7) for h in hours]
    order = rng.permutation(len(free))
    free = [free[k] for k in order.tolist()]
    busy: dict[int, set[tuple[int, int]]] = {i: set() for i in range(n_agents)}
    entries: dict[int, list[ScheduleEntry]] = {i: [] for i in range(n_agents)}

    def take(members: tuple[int, ...]) -> tuple[int, int, int]:
        for k, (t, d, h) in enumerate(free):
            if all((d, h) not in busy[m] for m in members):
                free.pop(k)
                for m in members:
                    busy[m].add((d, h))
                return t, d, h
        raise ValueError("ran out of private slots")

    planted = []
    for dist in range(2, max_distance + 1):
        seen = set()
        while len(seen) < per_distance:
            i = int(rng.integers(n_agents))
            offset = 2 * dist - int(rng.integers(2))
            j = (i + offset) % n_agents
            key = (min(i, j), max(i, j))
            if key in seen:
                continue
            seen.add(key)
            meetings = max(1, 8 - dist)
            for _ in range(meetings):
                t, d, h = take(key)
                e = _entry(frozenset({d}), h * 60, 30, tower_ids[t])
                entries[key[0]].append(e)
                entries[key[1]].append(e)
            planted.append((key, dist, meetings))
    for i in range(n_agents):
        t, d, h = take((i,))
        entries[i].append(_entry(frozenset({d}), h * 60, 30, tower_ids[t]))
    agents = [
        AgentSpec(names[i], tower_ids[0], tower_ids[0], tuple(entries[i]), 12.0, contacts[i], 60)
        for i in range(n_agents)
    ]
    return ScenarioConfig(
        towers,
        agents,
        days=14,
        seed=seed,
        name="social-decay",
        truths={
            "planted_pairs": str(len(planted)),
            "meetings_per_week": "max(1, 8 - hop_distance)",
        },
    )


def scale(
    records: int = 10_000_000,
    seed: int = 20160801,
    n_towers: int = 20_000,
    days: int = 28,
    group: int = 8,
    call_rate: float = 0.3,
) -> ScenarioConfig:
    """Large national-style population sized to roughly ``records`` calls.

    Agents keep home/work routines and call within small social circles;
    a handful of vendor hubs call more than a hundred people each.
    """
    side = int(np.ceil(np.sqrt(n_towers)))
    towers = _grid_towers(n_towers, side, 0.01, 0.013)
    tower_ids = list(towers)
    weekly_hours = 5 * 8 + 5 * 3 + 2 * 10
    n_agents = max(group * 2, int(records / (weekly_hours * days / 7 * call_rate)) // group * group)
    rate = records / (n_agents * weekly_hours * days / 7)
    rng = make_rng(seed)
    home = rng.integers(n_towers, size=n_agents)
    work = rng.integers(n_towers, size=n_agents)
    width = len(str(n_agents))
    names = [f"U{i:0{width}d}" for i in range(n_agents)]
    agents = []
    for i in range(n_agents):
        g = i - i % group
        circle = frozenset(names[g + k] for k in range(group) if g + k != i)
        h, w = tower_ids[home[i]], tower_ids[work[i]]
        schedule = (
            ScheduleEntry(WEEKDAYS, 9 * 60, 17 * 60, w),
            ScheduleEntry(WEEKDAYS, 19 * 60, 22 * 60, h),
            ScheduleEntry(WEEKEND, 10 * 60, 20 * 60, h),
        )
        agents.append(AgentSpec(names[i], h, w, schedule, rate, circle, 600))
    for k in range(5):
        hub = f"V{k}"
        customers = frozenset(names[j] for j in rng.choice(n_agents, size=150, replace=False).tolist())
        t = tower_ids[int(rng.integers(n_towers))]
        agents.append(AgentSpec(hub, t, t, (ScheduleEntry(WEEKDAYS, 10 * 60, 18 * 60, t),), 2.0, customers, 0))
    return ScenarioConfig(
        towers,
        agents,
        days=days,
        seed=seed,
        name="scale",
        truths={"target_records": str(records), "hubs": "V0 V1 V2 V3 V4"},
    )


BUILDERS: dict[str, Callable[[], ScenarioConfig]] = {
    "commuters": commuters,
    "weekend-crowd": weekend_crowd,
    "overlap": overlap,
    "gravity-grid": gravity_grid,
    "social-decay": social_decay,
}
SHIPPED = tuple(BUILDERS)
ON_DEMAND: dict[str, Callable[[], ScenarioConfig]] = {"scale": scale}


def preset_names() -> list[str]:
    return list(SHIPPED) + list(ON_DEMAND)


def preset_path(name: str):
    return resources.files("encounter_atlas.synthgen").joinpath("presets", f"{name}.scenario")


def load_preset(name: str) -> ScenarioConfig:
    if name in ON_DEMAND:
        return ON_DEMAND[name]()
    if name not in BUILDERS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")
    return parse_scenario(preset_path(name).read_text(encoding="utf-8"))
