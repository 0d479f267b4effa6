import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from encounter_atlas.cdr import Tower, read_cdr_frame
from encounter_atlas.encounters import detect_encounters, extract_presence
from encounter_atlas.network import build_comm_graph
from encounter_atlas.spatial import fit_gravity
from encounter_atlas.synthgen import (
    AgentSpec,
    ScenarioConfig,
    ScenarioError,
    ScheduleEntry,
    format_scenario,
    generate_cdr,
    generate_cdr_frame,
    generate_gravity_flows,
    load_preset,
    parse_scenario,
    preset_names,
    write_cdr_frame,
)
from encounter_atlas.synthgen.presets import BUILDERS, preset_path, scale
from encounter_atlas.synthgen.scenario import format_days, parse_days, parse_schedule

TOWERS = {"T1": Tower("T1", 42.5, 1.5, "food"), "T2": Tower("T2", 42.55, 1.55, "nature")}
DAILY = (ScheduleEntry(frozenset(range(7)), 8 * 60, 9 * 60, "T1"),)


def test_agent_without_contacts_makes_no_calls():
    agent = AgentSpec("A", "T1", "T1", DAILY, 5.0, frozenset(), 0)
    assert generate_cdr(ScenarioConfig(TOWERS, [agent], days=7)) == []


def test_two_daily_contacts_meet_seven_times():
    agents = [
        AgentSpec("A", "T1", "T1", DAILY, 1.0, frozenset({"B"}), 0),
        AgentSpec("B", "T1", "T1", DAILY, 1.0, frozenset({"A"}), 0),
    ]
    records = generate_cdr(ScenarioConfig(TOWERS, agents, days=7, seed=1))
    assert len(records) == 14
    assert len(detect_encounters(extract_presence(records), 3600)) == 7


def _digest(frame, path):
    write_cdr_frame(frame, path)
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_same_seed_same_bytes(tmp_path):
    scenario = load_preset("commuters")
    first = _digest(generate_cdr_frame(scenario), tmp_path / "a.csv")
    second = _digest(generate_cdr_frame(scenario), tmp_path / "b.csv")
    assert first == second
    other = ScenarioConfig(**{**scenario.__dict__, "seed": scenario.seed + 1})
    assert _digest(generate_cdr_frame(other), tmp_path / "c.csv") != first


def test_generated_file_parses_back(tmp_path):
    frame = generate_cdr_frame(load_preset("weekend-crowd"))
    write_cdr_frame(frame, tmp_path / "cdr.csv")
    back = read_cdr_frame(tmp_path / "cdr.csv")
    assert back.issues == [] and back.frame.equals(frame.frame)


def test_records_respect_schedule_and_durations():
    scenario = load_preset("commuters")
    frame = generate_cdr_frame(scenario).frame
    start = frame["start_time"].to_numpy()
    end = frame["end_time"].to_numpy()
    assert np.all((end - start >= 30) & (end - start <= 600))
    local = (start + int(scenario.tz_offset * 3600)) % 86_400
    # Work calls fall in 08:00-09:00 and family calls in 19:00-20:00, each widened by the jitter.
    in_work = (local >= 7.5 * 3600) & (local < 9.5 * 3600)
    in_home = (local >= 18.5 * 3600) & (local < 20.5 * 3600)
    assert np.all(in_work | in_home)


def test_calls_only_to_contacts_and_every_contact_reached():
    scenario = load_preset("social-decay")
    graph = build_comm_graph(generate_cdr_frame(scenario))
    planted = {tuple(sorted((a.agent_id, c))) for a in scenario.agents for c in a.contact_set}
    assert {(p.user_a, p.user_b) for p in graph.edges} == planted


def test_call_counts_follow_rate():
    agents = [
        AgentSpec("A", "T1", "T1", DAILY, 2.5, frozenset({"B"}), 0),
        AgentSpec("B", "T1", "T1"),
    ]
    frame = generate_cdr_frame(ScenarioConfig(TOWERS, agents, days=200, seed=3)).frame
    per_day = frame.group_by((frame["start_time"] + 7200) // 86_400).len()["len"].to_numpy()
    assert set(per_day.tolist()) <= {2, 3}
    assert abs(per_day.mean() - 2.5) < 0.15


# gravity flows


def grid():
    return {f"G{k:02d}": Tower(f"G{k:02d}", 42.4 + (k // 5) * 0.03, 1.4 + (k % 5) * 0.04) for k in range(20)}


def pops(towers, seed=0):
    rng = np.random.default_rng(seed)
    return {t: int(p) for t, p in zip(towers, rng.integers(200, 3000, size=len(towers)))}


def test_noise_free_gravity_round_trip():
    towers = grid()
    fit = fit_gravity(generate_gravity_flows(towers, pops(towers), (1.0, 0.5, 0.5, 1.0)), towers)
    assert np.allclose([fit.alpha, fit.beta, fit.gamma], [0.5, 0.5, 1.0], atol=1e-6)


def test_distance_free_gravity():
    towers = grid()
    fit = fit_gravity(generate_gravity_flows(towers, pops(towers, 1), (1.0, 0.5, 0.5, 0.0)), towers)
    assert abs(fit.gamma) < 1e-6


def test_noisy_gravity_with_reported_exponents():
    towers = grid()
    flows = generate_gravity_flows(towers, pops(towers, 2), (2.0, 0.38, 0.407, 0.823), noise_sigma=0.1, seed=11)
    fit = fit_gravity(flows, towers)
    assert np.allclose([fit.alpha, fit.beta, fit.gamma], [0.38, 0.407, 0.823], atol=0.05)


def test_gravity_flow_errors():
    towers = {"A": Tower("A", 1, 1), "B": Tower("B", 1, 1)}
    with pytest.raises(ScenarioError, match="degenerate"):
        generate_gravity_flows(towers, {"A": 1, "B": 2}, (1, 1, 1, 1))
    with pytest.raises(ValueError):
        generate_gravity_flows(grid(), {"G00": 0, "G01": 1}, (1, 1, 1, 1))
    with pytest.raises(ValueError):
        generate_gravity_flows(grid(), pops(grid()), (1, 1, 1, 1), noise_sigma=-1)
    with pytest.raises(ScenarioError):
        generate_gravity_flows(grid(), {"nowhere": 5}, (1, 1, 1, 1))


def test_noise_is_seeded():
    towers = grid()
    a = generate_gravity_flows(towers, pops(towers), (1, 0.5, 0.5, 1), 0.2, seed=4).count
    b = generate_gravity_flows(towers, pops(towers), (1, 0.5, 0.5, 1), 0.2, seed=4).count
    assert np.array_equal(a, b)


# scenario files


def test_presets_ship_and_match_builders():
    for name in BUILDERS:
        assert preset_path(name).read_text(encoding="utf-8") == format_scenario(BUILDERS[name]())
    assert set(preset_names()) == set(BUILDERS) | {"scale"}
    with pytest.raises(KeyError):
        load_preset("nope")


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_preset_round_trip(name):
    scenario = load_preset(name)
    assert parse_scenario(format_scenario(scenario)) == scenario


def test_unknown_tower_names_agent():
    text = format_scenario(ScenarioConfig(TOWERS, [AgentSpec("Z9", "T1", "T1", DAILY, 1.0, frozenset(), 0)]))
    with pytest.raises(ScenarioError, match="agent Z9: unknown tower 'T7'"):
        parse_scenario(text.replace("08:00-09:00 T1", "08:00-09:00 T7"))


@pytest.mark.parametrize(
    "text, message",
    [
        ("days = 0\n", "days"),
        ("colour = red\n", "unknown scenario keys"),
        ("[moon]\n", "unknown block"),
        ("[tower]\nid = T\nlat = 99\nlon = 0\n", "latitude"),
        ("start_date = 2016-13-01\n", "start_date"),
        ("[agent]\nid = A\nhome = T\ncontacts = A\n", "itself"),
    ],
)
def test_scenario_errors(text, message):
    with pytest.raises(ScenarioError, match=message):
        parse_scenario(text)


def test_schedule_syntax():
    entry = parse_schedule("mon-fri 08:00-09:30 T1")
    assert entry == ScheduleEntry(frozenset(range(5)), 480, 570, "T1")
    assert parse_schedule(entry.format()) == entry
    for bad in ("daily 09:00-08:00 T1", "mon 08:00 T1", "xyz 08:00-09:00 T1"):
        with pytest.raises(ScenarioError):
            parse_schedule(bad)


@given(st.frozensets(st.integers(0, 6), min_size=1))
def test_day_sets_round_trip(days):
    assert parse_days(format_days(days)) == days


def test_scale_preset_size():
    scenario = scale(records=50_000, n_towers=200, days=7)
    frame = generate_cdr_frame(scenario)
    assert abs(len(frame) - 50_000) < 2_500
    hubs = {a.agent_id for a in scenario.agents if len(a.contact_set) > 100}
    assert hubs == {"V0", "V1", "V2", "V3", "V4"}
