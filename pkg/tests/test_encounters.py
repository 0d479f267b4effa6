import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from encounter_atlas.cdr import CallRecord, CdrFrame
from encounter_atlas.encounters import (
    EncounterEpisode,
    EpisodeTable,
    PairKey,
    PresenceEvent,
    PresenceTable,
    brute_force_encounters,
    detect_encounters,
    detect_encounters_table,
    extract_presence,
    pair_encounter_counts,
    presence_table,
    read_episodes,
)
from encounter_atlas.synthgen import AgentSpec, ScenarioConfig, ScheduleEntry, generate_cdr
from encounter_atlas.cdr import Tower


def ev(user, tower, t):
    return PresenceEvent(user, tower, t)


# presence extraction


def test_caller_only_presence():
    rec = CallRecord("A", "B", "T1", 100, 160)
    assert extract_presence([rec], "caller_only") == [ev("A", "T1", 100)]


def test_both_parties_presence():
    rec = CallRecord("A", "B", "T1", 100, 160)
    assert extract_presence([rec], "both_parties") == [ev("A", "T1", 100), ev("B", "T1", 100)]


def test_duplicate_records_give_one_event():
    rec = CallRecord("A", "B", "T1", 100, 160)
    assert extract_presence([rec, rec]) == [ev("A", "T1", 100)]


def test_unknown_policy():
    with pytest.raises(ValueError):
        extract_presence([], "everyone")


@pytest.mark.parametrize("policy", ["caller_only", "both_parties"])
def test_columnar_presence_matches_records(policy):
    recs = [CallRecord("B", "A", "T2", 5, 9), CallRecord("A", "C", "T1", 5, 6), CallRecord("B", "A", "T2", 5, 7)]
    table = presence_table(CdrFrame.from_records(recs), policy)
    assert sorted(table.to_events()) == sorted(extract_presence(recs, policy))


# pair keys and episodes


def test_pair_key_is_canonical():
    assert PairKey.of("b", "a") == PairKey("a", "b")
    with pytest.raises(ValueError):
        PairKey("b", "a")
    with pytest.raises(ValueError):
        PairKey.of("a", "a")


def test_episode_invariant():
    with pytest.raises(ValueError):
        EncounterEpisode(PairKey("a", "b"), "T", 10, 5, 1)


# detection


def test_single_in_window_pair():
    eps = detect_encounters([ev("A", "T1", 1000), ev("B", "T1", 2000)], 3600)
    assert eps == [EncounterEpisode(PairKey("A", "B"), "T1", 1000, 2000, 1)]


def test_different_towers_never_meet():
    assert detect_encounters([ev("A", "T1", 1000), ev("B", "T2", 1000)], 3600) == []


def test_strictly_outside_window():
    assert detect_encounters([ev("A", "T1", 0), ev("B", "T1", 3601)], 3600) == []


def test_window_boundary_is_inclusive():
    assert len(detect_encounters([ev("A", "T1", 0), ev("B", "T1", 3600)], 3600)) == 1


def test_chained_cooccurrences_merge():
    events = [ev("A", "T1", 0), ev("B", "T1", 3000), ev("A", "T1", 6000), ev("B", "T1", 9000)]
    (episode,) = detect_encounters(events, 3600)
    assert (episode.first_time, episode.last_time, episode.event_count) == (0, 9000, 3)


def test_separate_episodes_when_gap_exceeds_window():
    events = [ev("A", "T1", 0), ev("B", "T1", 10), ev("A", "T1", 8000), ev("B", "T1", 8010)]
    eps = detect_encounters(events, 3600)
    assert [(e.first_time, e.last_time) for e in eps] == [(0, 10), (8000, 8010)]


def test_empty_input():
    assert detect_encounters([], 3600) == []
    assert brute_force_encounters([], 3600) == []


def test_invalid_window():
    with pytest.raises(ValueError):
        detect_encounters([ev("A", "T", 0)], 0)


def _random_events(rng, n, towers, users, span):
    return [
        ev(f"u{rng.integers(users)}", f"t{rng.integers(towers)}", int(rng.integers(span)))
        for _ in range(n)
    ]


def test_500_events_match_oracle():
    rng = np.random.default_rng(11)
    events = _random_events(rng, 500, 5, 10, 48 * 3600)
    assert detect_encounters(events, 3600) == brute_force_encounters(events, 3600)


_events = st.lists(
    st.builds(
        PresenceEvent,
        st.sampled_from(["a", "b", "c", "d", "e"]),
        st.sampled_from(["T1", "T2"]),
        st.integers(0, 20_000),
    ),
    max_size=40,
)


@given(_events, st.sampled_from([1, 600, 3600, 7200]), st.integers(1, 4), st.integers(1, 50))
def test_engine_equals_oracle_for_any_partition_and_chunking(events, window, workers, chunk):
    expected = brute_force_encounters(events, window)
    table = detect_encounters_table(PresenceTable.from_events(events), window, workers=workers, chunk_pairs=chunk)
    assert table.to_episodes() == expected


@given(st.lists(st.builds(PresenceEvent, st.sampled_from("ab"), st.just("T"), st.integers(0, 5000)), max_size=2))
def test_tiny_inputs_match_oracle(events):
    assert detect_encounters(events, 3600) == brute_force_encounters(events, 3600)


@given(_events, st.sampled_from([600, 3600]))
def test_episode_invariants(events, window):
    times = {}
    for e in events:
        times.setdefault((e.user_id, e.tower_id), set()).add(e.timestamp)
    for episode in detect_encounters(events, window):
        assert episode.pair.user_a < episode.pair.user_b
        assert episode.last_time >= episode.first_time
        ta = times[(episode.pair.user_a, episode.tower_id)]
        tb = times[(episode.pair.user_b, episode.tower_id)]
        assert episode.first_time in ta | tb and episode.last_time in ta | tb


def test_brute_force_size_guard():
    with pytest.raises(ValueError):
        brute_force_encounters((ev(f"u{i}", "T", i) for i in range(100_001)), 1)


# pair counts


def _ep(a, b, t=0, tower="T"):
    return EncounterEpisode(PairKey(a, b), tower, t, t, 1)


def test_pair_counts():
    eps = [_ep("A", "B", 0), _ep("A", "B", 10), _ep("A", "B", 20), _ep("A", "C")]
    assert pair_encounter_counts(eps) == {PairKey("A", "B"): 3, PairKey("A", "C"): 1}
    assert pair_encounter_counts(EpisodeTable.from_episodes(eps)) == pair_encounter_counts(eps)
    assert pair_encounter_counts([]) == {}


def test_daily_meeting_pair_counts_seven():
    towers = {"T1": Tower("T1", 42.5, 1.5)}
    slot = (ScheduleEntry(frozenset(range(7)), 8 * 60, 9 * 60, "T1"),)
    agents = [
        AgentSpec("A", "T1", "T1", slot, 1.0, frozenset({"B"}), 0),
        AgentSpec("B", "T1", "T1", slot, 1.0, frozenset({"A"}), 0),
    ]
    records = generate_cdr(ScenarioConfig(towers, agents, days=7, seed=3))
    counts = pair_encounter_counts(detect_encounters(extract_presence(records), 3600))
    assert counts == {PairKey("A", "B"): 7}


def test_episode_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    events = _random_events(rng, 200, 4, 8, 20_000)
    table = detect_encounters_table(PresenceTable.from_events(events), 3600)
    table.write_csv(tmp_path / "e.csv")
    back = read_episodes(tmp_path / "e.csv")
    assert back.to_episodes() == table.to_episodes()
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "user_a,user_b,tower_id,first_epoch_s,last_epoch_s,event_count"


def test_empty_episode_file(tmp_path):
    EpisodeTable.empty().write_csv(tmp_path / "e.csv")
    assert len(read_episodes(tmp_path / "e.csv")) == 0


def test_read_episodes_rejects_non_canonical(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("user_a,user_b,tower_id,first_epoch_s,last_epoch_s,event_count\nB,A,T,1,2,1\n")
    with pytest.raises(ValueError, match="canonical"):
        read_episodes(path)
