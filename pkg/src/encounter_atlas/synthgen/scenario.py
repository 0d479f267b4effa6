"""Scenario model and the key/value scenario file format.

A scenario file holds top-level ``key = value`` lines followed by
repeated blocks introduced by ``[tower]``, ``[agent]``, ``[gravity]`` or
``[truth]``. Inside an ``[agent]`` block ``schedule`` may repeat::

    name = commuters
    days = 7
    seed = 7

    [tower]
    id = T01
    lat = 42.5078
    lon = 1.5211
    poi = food

    [agent]
    id = C001
    home = T01
    work = T02
    call_rate = 1.0
    jitter = 1800
    contacts = F001 F002
    schedule = mon-fri 08:00-09:00 T02
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from ..cdr import Tower

DAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleEntry:
    days: frozenset[int]  # Monday = 0
    start_minute: int  # local minutes after midnight
    end_minute: int
    tower_id: str

    def __post_init__(self) -> None:
        if not self.days or not all(0 <= d < 7 for d in self.days):
            raise ScenarioError("schedule needs at least one valid weekday")
        if not 0 <= self.start_minute < self.end_minute <= 24 * 60:
            raise ScenarioError(f"bad schedule window {self.start_minute}-{self.end_minute}")

    @property
    def hours(self) -> float:
        return (self.end_minute - self.start_minute) / 60.0

    def format(self) -> str:
        return f"{format_days(self.days)} {_hhmm(self.start_minute)}-{_hhmm(self.end_minute)} {self.tower_id}"


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    home_tower: str
    work_tower: str
    schedule: tuple[ScheduleEntry, ...] = ()
    call_rate: float = 1.0
    contact_set: frozenset[str] = frozenset()
    jitter_seconds: int = 0

    def __post_init__(self) -> None:
        if self.agent_id in self.contact_set:
            raise ScenarioError(f"agent {self.agent_id}: contact_set contains itself")
        if self.call_rate < 0:
            raise ScenarioError(f"agent {self.agent_id}: negative call_rate")
        if self.jitter_seconds < 0:
            raise ScenarioError(f"agent {self.agent_id}: negative jitter")


@dataclass(frozen=True)
class GravityParams:
    c: float
    alpha: float
    beta: float
    gamma: float
    noise_sigma: float = 0.0


@dataclass
class ScenarioConfig:
    towers: dict[str, Tower]
    agents: list[AgentSpec]
    days: int = 7
    tz_offset: float = 2.0
    seed: int = 0
    gravity_params: Optional[GravityParams] = None
    popularity: dict[str, int] = field(default_factory=dict)
    start_date: str = "2016-07-04"
    name: str = "scenario"
    truths: dict[str, str] = field(default_factory=dict)

    def start_epoch(self) -> int:
        """Epoch seconds of local midnight on ``start_date``."""
        day = dt.date.fromisoformat(self.start_date)
        midnight = dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc)
        return int(midnight.timestamp()) - int(round(self.tz_offset * 3600))

    def validate(self) -> None:
        if self.days < 1:
            raise ScenarioError("days must be >= 1")
        if not -(2**63) <= self.seed < 2**64:
            raise ScenarioError("seed must fit in 64 bits")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate agent ids")
        known = set(ids)
        for agent in self.agents:
            for tower in (agent.home_tower, agent.work_tower, *(e.tower_id for e in agent.schedule)):
                if tower not in self.towers:
                    raise ScenarioError(f"agent {agent.agent_id}: unknown tower {tower!r}")
            unknown = sorted(agent.contact_set - known)
            if unknown:
                raise ScenarioError(f"agent {agent.agent_id}: unknown contact {unknown[0]!r}")
        for tower in self.popularity:
            if tower not in self.towers:
                raise ScenarioError(f"popularity for unknown tower {tower!r}")
        if self.gravity_params is not None and len(self.popularity) < 2:
            raise ScenarioError("gravity scenarios need tower popularity values")
        if self.start_epoch() < 0:
            raise ScenarioError("start_date precedes the epoch")


# ---------------------------------------------------------------------------
# parsing helpers


def _hhmm(minutes: int) -> str:
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def _parse_hhmm(text: str) -> int:
    try:
        h, m = text.split(":")
        value = int(h) * 60 + int(m)
    except ValueError as exc:
        raise ScenarioError(f"bad time {text!r}") from exc
    if not 0 <= int(m) < 60:
        raise ScenarioError(f"bad time {text!r}")
    return value


def parse_days(text: str) -> frozenset[int]:
    text = text.strip().lower()
    if text in ("daily", "all"):
        return frozenset(range(7))
    if text == "weekdays":
        return frozenset(range(5))
    if text == "weekends":
        return frozenset((5, 6))
    days: set[int] = set()
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-", 1)
            lo, hi = _day_index(a), _day_index(b)
            if hi < lo:
                raise ScenarioError(f"bad day range {part!r}")
            days.update(range(lo, hi + 1))
        else:
            days.add(_day_index(part))
    return frozenset(days)


def _day_index(name: str) -> int:
    try:
        return DAY_NAMES.index(name.strip()[:3])
    except ValueError as exc:
        raise ScenarioError(f"unknown day {name!r}") from exc


def format_days(days: frozenset[int]) -> str:
    if days == frozenset(range(7)):
        return "daily"
    return ",".join(DAY_NAMES[d] for d in sorted(days))


def parse_schedule(text: str) -> ScheduleEntry:
    parts = text.split()
    if len(parts) != 3:
        raise ScenarioError(f"schedule must be '<days> HH:MM-HH:MM <tower>', got {text!r}")
    days, window, tower = parts
    if "-" not in window:
        raise ScenarioError(f"bad window {window!r}")
    start, end = window.split("-", 1)
    return ScheduleEntry(parse_days(days), _parse_hhmm(start), _parse_hhmm(end), tower)


# ---------------------------------------------------------------------------
# file format


def _blocks(text: str) -> list[tuple[str, int, list[tuple[str, str, int]]]]:
    blocks: list[tuple[str, int, list[tuple[str, str, int]]]] = [("", 0, [])]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            blocks.append((line[1:-1].strip().lower(), lineno, []))
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        blocks[-1][2].append((key.strip().lower(), value.strip(), lineno))
    return blocks


def _single(items: list[tuple[str, str, int]], where: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for key, value, lineno in items:
        if key in out:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r} in {where}")
        out[key] = value
    return out


def _num(value: str, kind, where: str):
    try:
        return kind(value)
    except ValueError as exc:
        raise ScenarioError(f"{where}: bad number {value!r}") from exc


def parse_scenario(text: str) -> ScenarioConfig:
    top: dict[str, str] = {}
    towers: dict[str, Tower] = {}
    popularity: dict[str, int] = {}
    agents: list[AgentSpec] = []
    gravity: Optional[GravityParams] = None
    truths: dict[str, str] = {}
    for kind, lineno, items in _blocks(text):
        where = f"[{kind}] block at line {lineno}" if kind else "header"
        if kind == "":
            top = _single(items, where)
        elif kind == "tower":
            d = _single(items, where)
            try:
                tid = d["id"]
                tower = Tower(tid, float(d["lat"]), float(d["lon"]), d.get("poi") or None)
            except KeyError as exc:
                raise ScenarioError(f"{where}: missing {exc.args[0]}") from exc
            except ValueError as exc:
                raise ScenarioError(f"{where}: {exc}") from exc
            if tid in towers:
                raise ScenarioError(f"{where}: duplicate tower {tid!r}")
            towers[tid] = tower
            if "popularity" in d:
                popularity[tid] = _num(d["popularity"], int, where)
        elif kind == "agent":
            schedule = tuple(parse_schedule(v) for k, v, _ in items if k == "schedule")
            d = _single([i for i in items if i[0] != "schedule"], where)
            try:
                aid = d["id"]
                agent = AgentSpec(
                    agent_id=aid,
                    home_tower=d["home"],
                    work_tower=d.get("work", d["home"]),
                    schedule=schedule,
                    call_rate=_num(d.get("call_rate", "1.0"), float, where),
                    contact_set=frozenset(d.get("contacts", "").split()),
                    jitter_seconds=_num(d.get("jitter", "0"), int, where),
                )
            except KeyError as exc:
                raise ScenarioError(f"{where}: missing {exc.args[0]}") from exc
            agents.append(agent)
        elif kind == "gravity":
            d = _single(items, where)
            try:
                gravity = GravityParams(
                    float(d["c"]),
                    float(d["alpha"]),
                    float(d["beta"]),
                    float(d["gamma"]),
                    float(d.get("noise_sigma", "0")),
                )
            except KeyError as exc:
                raise ScenarioError(f"{where}: missing {exc.args[0]}") from exc
            except ValueError as exc:
                raise ScenarioError(f"{where}: {exc}") from exc
        elif kind == "truth":
            truths.update(_single(items, where))
        else:
            raise ScenarioError(f"line {lineno}: unknown block [{kind}]")
    known = {"name", "days", "tz_offset", "seed", "start_date"}
    extra = set(top) - known
    if extra:
        raise ScenarioError(f"unknown scenario keys: {', '.join(sorted(extra))}")
    config = ScenarioConfig(
        towers=towers,
        agents=agents,
        days=_num(top.get("days", "7"), int, "days"),
        tz_offset=_num(top.get("tz_offset", "2"), float, "tz_offset"),
        seed=_num(top.get("seed", "0"), int, "seed"),
        gravity_params=gravity,
        popularity=popularity,
        start_date=top.get("start_date", "2016-07-04"),
        name=top.get("name", "scenario"),
        truths=truths,
    )
    try:
        dt.date.fromisoformat(config.start_date)
    except ValueError as exc:
        raise ScenarioError(f"bad start_date {config.start_date!r}") from exc
    config.validate()
    return config


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def _float(x: float) -> str:
    return repr(float(x))


def format_scenario(config: ScenarioConfig) -> str:
    lines = [
        "# encounter-atlas scenario",
        f"name = {config.name}",
        f"days = {config.days}",
        f"tz_offset = {_float(config.tz_offset)}",
        f"seed = {config.seed}",
        f"start_date = {config.start_date}",
    ]
    if config.truths:
        lines += ["", "[truth]"]
        lines += [f"{k} = {v}" for k, v in config.truths.items()]
    if config.gravity_params is not None:
        g = config.gravity_params
        lines += [
            "",
            "[gravity]",
            f"c = {_float(g.c)}",
            f"alpha = {_float(g.alpha)}",
            f"beta = {_float(g.beta)}",
            f"gamma = {_float(g.gamma)}",
            f"noise_sigma = {_float(g.noise_sigma)}",
        ]
    for t in config.towers.values():
        lines += ["", "[tower]", f"id = {t.tower_id}", f"lat = {_float(t.latitude)}", f"lon = {_float(t.longitude)}"]
        if t.poi_category:
            lines.append(f"poi = {t.poi_category}")
        if t.tower_id in config.popularity:
            lines.append(f"popularity = {config.popularity[t.tower_id]}")
    for a in config.agents:
        lines += [
            "",
            "[agent]",
            f"id = {a.agent_id}",
            f"home = {a.home_tower}",
            f"work = {a.work_tower}",
            f"call_rate = {_float(a.call_rate)}",
            f"jitter = {a.jitter_seconds}",
        ]
        if a.contact_set:
            lines.append(f"contacts = {' '.join(sorted(a.contact_set))}")
        lines += [f"schedule = {e.format()}" for e in a.schedule]
    return "\n".join(lines) + "\n"
