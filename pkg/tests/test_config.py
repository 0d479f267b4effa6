import pytest

from encounter_atlas.config import AnalysisConfig, ConfigError, WORKERS_ENV, default_workers, resolve_config


def test_defaults():
    cfg = AnalysisConfig(workers=1)
    assert (cfg.window_seconds, cfg.max_degree, cfg.iet_bin_seconds) == (3600, 100, 3600)
    assert (cfg.min_edge_pairs, cfg.distance_floor_km) == (2000, 0.1)
    assert cfg.presence_attribution == "caller_only"


@pytest.mark.parametrize(
    "field, value",
    [
        ("window_seconds", 0),
        ("iet_bin_seconds", -5),
        ("max_degree", 0),
        ("min_edge_pairs", -1),
        ("distance_floor_km", -0.1),
        ("presence_attribution", "callee_only"),
        ("rng_seed", 2**64),
        ("distance_buckets", "3,1"),
        ("workers", 0),
    ],
)
def test_invalid_values(field, value):
    with pytest.raises((ConfigError, ValueError)):
        AnalysisConfig(**{field: value})


def test_flags_override_file_override_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nwindow_seconds = 600\nmax_degree=50\nattribution = both\n")
    cfg = resolve_config(path, {"max_degree": 20, "tz_offset": None, "workers": 2})
    assert cfg.window_seconds == 600
    assert cfg.max_degree == 20
    assert cfg.presence_attribution == "both_parties"
    assert cfg.tz_offset == 2.0


def test_bad_file_lines(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("window_seconds\n")
    with pytest.raises(ConfigError, match="expected key = value"):
        resolve_config(path)
    path.write_text("colour = blue\n")
    with pytest.raises(ConfigError, match="unknown"):
        resolve_config(path)
    path.write_text("window_seconds = soon\n")
    with pytest.raises(ConfigError, match="bad value"):
        resolve_config(path)


def test_string_booleans(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("strict = yes\n")
    assert resolve_config(path, {"workers": 1}).strict is True


def test_snapshot_excludes_workers():
    assert "workers" not in AnalysisConfig(workers=3).snapshot()
    assert AnalysisConfig(workers=3).snapshot() == AnalysisConfig(workers=8).snapshot()


def test_workers_env(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "6")
    assert default_workers() == 6
    assert AnalysisConfig().workers == 6
    monkeypatch.setenv(WORKERS_ENV, "none")
    with pytest.raises(ConfigError):
        default_workers()
    monkeypatch.delenv(WORKERS_ENV)
    assert default_workers() >= 1
