import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from encounter_atlas.cdr import Tower
from encounter_atlas.encounters import EncounterEpisode, EpisodeTable, PairKey, detect_encounters_table, presence_table
from encounter_atlas.synthgen import AgentSpec, ScenarioConfig, ScheduleEntry, generate_cdr_frame, load_preset
from encounter_atlas.temporal import (
    consecutive_time_matrix,
    hourly_profile,
    inter_event_distribution,
    inter_event_gaps,
    local_day_hour,
    transition_dump,
)

TZ = 2.0
DAY = 86_400


def local_epoch(y, m, d, hh, mm=0, tz=TZ):
    moment = dt.datetime(y, m, d, hh, mm, tzinfo=dt.timezone(dt.timedelta(hours=tz)))
    return int(moment.timestamp())


def ep(t, a="A", b="B", tower="T1"):
    return EncounterEpisode(PairKey(a, b), tower, t, t, 1)


def test_local_day_hour_matches_datetime():
    rng = np.random.default_rng(0)
    times = rng.integers(0, 2_000_000_000, size=200)
    for tz in (-5.5, 0.0, 2.0, 9.0):
        dow, hour = local_day_hour(times, tz)
        for t, d, h in zip(times.tolist(), dow.tolist(), hour.tolist()):
            moment = dt.datetime.fromtimestamp(t, dt.timezone(dt.timedelta(hours=tz)))
            assert (d, h) == (moment.weekday(), moment.hour)


def test_monday_morning_episode():
    profile = hourly_profile([ep(local_epoch(2016, 7, 4, 9, 30))], TZ)
    assert profile.counts[0, 9] == 1
    assert profile.total() == 1


def test_empty_profile():
    profile = hourly_profile([], TZ)
    assert profile.counts.shape == (7, 24) and profile.total() == 0
    assert profile.to_csv().splitlines()[1] == "Mon,0,0"


@given(st.lists(st.integers(0, 2_000_000_000), max_size=50))
def test_profile_sums_to_episode_count(times):
    episodes = [ep(t, tower=f"T{k}") for k, t in enumerate(times)]
    assert hourly_profile(episodes, TZ).total() == len(episodes)


def test_weekday_commuters_concentrate_in_morning_cells():
    towers = {"W": Tower("W", 42.5, 1.5)}
    slot = (ScheduleEntry(frozenset(range(5)), 8 * 60, 9 * 60, "W"),)
    names = [f"C{i:02d}" for i in range(10)]
    agents = [AgentSpec(n, "W", "W", slot, 1.0, frozenset({names[(i + 1) % 10]}), 300) for i, n in enumerate(names)]
    frame = generate_cdr_frame(ScenarioConfig(towers, agents, days=14, seed=9))
    episodes = detect_encounters_table(presence_table(frame), 3600)
    counts = hourly_profile(episodes, TZ).counts
    assert counts[:5, 8:10].sum() >= 0.95 * counts.sum()


# inter-event


def test_single_daily_gap():
    dist = inter_event_distribution([ep(0), ep(DAY)], 3600)
    assert dist.sample_count == 1
    assert dist.density == [(24, 1.0)]


def test_single_episode_is_empty():
    dist = inter_event_distribution([ep(0)], 3600)
    assert dist.sample_count == 0 and dist.density == []
    with pytest.raises(ValueError):
        dist.modal_bin()


def test_centered_and_left_bins():
    episodes = [ep(0), ep(DAY - 60), ep(2 * DAY - 60 + 1800)]
    centered = inter_event_distribution(episodes, 3600)
    left = inter_event_distribution(episodes, 3600, centered=False)
    assert [i for i, _ in centered.density] == [24, 25]
    assert [i for i, _ in left.density] == [23, 24]
    assert centered.bin_of(DAY - 60) == 24 and left.bin_of(DAY - 60) == 23
    assert centered.to_csv().splitlines()[25].startswith(f"{24 * 3600 - 1800},")
    assert left.to_csv().splitlines()[24].startswith(f"{23 * 3600},")


def test_gaps_cross_towers_but_not_pairs():
    episodes = [ep(0, tower="T1"), ep(100, tower="T2"), ep(50, a="C", b="D"), ep(400, a="C", b="D")]
    assert sorted(inter_event_gaps(episodes).tolist()) == [100, 350]


@given(st.lists(st.tuples(st.sampled_from(["A", "B", "C"]), st.integers(0, 10**6)), max_size=40), st.integers(1, 10**5))
def test_probabilities_sum_to_one(items, bin_seconds):
    episodes = [ep(t, a=a, b="Z", tower=f"T{k}") for k, (a, t) in enumerate(items)]
    dist = inter_event_distribution(episodes, bin_seconds)
    if dist.sample_count:
        assert abs(dist.probabilities.sum() - 1.0) <= 1e-9
    assert np.all(dist.probabilities >= 0)


def test_commuters_period_signature():
    frame = generate_cdr_frame(load_preset("commuters"))
    episodes = detect_encounters_table(presence_table(frame), 3600)
    dist = inter_event_distribution(episodes, 3600)
    counts = np.zeros(200, dtype=np.int64)
    counts[: len(dist.counts)] = dist.counts
    assert dist.modal_bin() == 24
    idx = np.arange(len(counts))
    far = np.minimum(idx % 24, 24 - idx % 24) > 6
    assert counts[48] > counts[far].max() and counts[72] > counts[far].max()


# consecutive-time matrix


def test_weekday_only_transitions():
    mon = local_epoch(2016, 7, 4, 10)
    matrix = consecutive_time_matrix([ep(mon), ep(mon + DAY), ep(mon + 2 * DAY)], TZ)
    assert matrix.day_class.tolist() == [[2, 0], [0, 0]]
    assert matrix.off_diagonal_fraction() == 0.0


def test_saturday_to_sunday_transition():
    sat = local_epoch(2016, 7, 9, 23)
    matrix = consecutive_time_matrix([ep(sat), ep(sat + DAY)], TZ)
    assert matrix.day_class[1, 1] == 1 and matrix.day_class.sum() == 1
    assert matrix.hours[23, 23] == 1 and matrix.hours.sum() == 1


@given(st.lists(st.tuples(st.sampled_from(["A", "B"]), st.integers(0, 10**7)), max_size=30))
def test_tables_sum_to_transition_count(items):
    episodes = [ep(t, a=a, b="Z", tower=f"T{k}") for k, (a, t) in enumerate(items)]
    matrix = consecutive_time_matrix(episodes, TZ)
    n = len(inter_event_gaps(episodes))
    assert matrix.day_class.sum() == n == matrix.hours.sum()


def test_weekend_crowd_separation():
    frame = generate_cdr_frame(load_preset("weekend-crowd"))
    episodes = detect_encounters_table(presence_table(frame), 3600)
    assert consecutive_time_matrix(episodes, TZ).off_diagonal_fraction() < 0.05


def test_transition_dump_lines():
    text = transition_dump(EpisodeTable.from_episodes([ep(0, tower="T1"), ep(10, tower="T2")]))
    assert text.splitlines() == ["user_a,user_b,first_epoch_s,next_epoch_s,first_tower,next_tower", "A,B,0,10,T1,T2"]
