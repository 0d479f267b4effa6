"""End-to-end stages behind the command-line interface.

Each stage reports failures as :class:`StageError` carrying the stage name,
so callers can tell a malformed CDR line from a bad tower table. Export
files are byte-deterministic; timings only ever go to ``manifest.json``.
"""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np

from .cdr import CdrFrame, Tower, load_towers, read_cdr_frame, write_towers
from .config import AnalysisConfig
from .encounters import EpisodeTable, detect_encounters_table, pair_counts_columns, presence_table, read_episodes
from .network import (
    CommGraph,
    batch_distances,
    build_comm_graph,
    curve_from_arrays,
    encounter_distance_spearman,
    filter_high_degree,
    is_edge,
    parse_buckets,
)
from .spatial import (
    GravityFitError,
    consecutive_flows,
    fit_gravity,
    flow_distance_curve,
    flows_csv,
    poi_transition_matrix,
    reencounter_network,
    tower_summary,
    tower_summary_csv,
)
from .synthgen import ScenarioConfig, format_scenario, generate_cdr_frame, write_cdr_frame
from .temporal import consecutive_time_matrix, hourly_profile, inter_event_distribution

EPISODES_FILE = "episodes.csv"
MANIFEST_FILE = "manifest.json"
ANALYSIS_FILES = (
    "hourly_profile.csv",
    "inter_event.csv",
    "consec_matrix.csv",
    "flows.csv",
    "flow_distance.csv",
    "gravity_fit.json",
    "poi_matrix.csv",
    "reencounter_edges.csv",
    "distance_curve.csv",
    "tower_summary.csv",
)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = message


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a stage and attribute any failure inside it."""
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except (ValueError, KeyError, OSError) as exc:
            raise StageError(name, _describe(exc)) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def add_input(self, label: str, path: str | Path) -> None:
        self.inputs[label] = sha256_file(path)

    def to_dict(self) -> dict[str, Any]:
        data = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings_s": self.timings,
            "counts": self.counts,
        }
        data.update(self.extra)
        return data

    def write(self, out_dir: Path) -> None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        _write_text(out_dir / MANIFEST_FILE, text, "write")


def _describe(exc: BaseException) -> str:
    if isinstance(exc, KeyError) and exc.args:
        return str(exc.args[0])
    return str(exc)


def _prepare_out_dir(out_dir: str | Path) -> Path:
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise StageError("output", f"output directory {str(path)!r} is not writable: {exc.strerror or exc}") from exc
    return path


def _write_text(path: Path, text: str, stage: str = "write") -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise StageError(stage, f"cannot write {path}: {exc.strerror or exc}") from exc


def _require_file(path: str | Path, label: str, stage: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise StageError(stage, f"{label} file not found: {p}")
    return p


# ---------------------------------------------------------------------------
# shared loading


def _load_towers(path: str | Path, manifest: RunManifest) -> dict[str, Tower]:
    with manifest.stage("read-towers"):
        p = _require_file(path, "tower", "read-towers")
        manifest.add_input("towers", p)
        towers = load_towers(p)
    manifest.counts["towers"] = len(towers)
    return towers


def _load_cdr(path: str | Path, towers: Mapping[str, Tower], config: AnalysisConfig, manifest: RunManifest) -> CdrFrame:
    with manifest.stage("read-cdr"):
        p = _require_file(path, "CDR", "read-cdr")
        manifest.add_input("cdr", p)
        cdr = read_cdr_frame(p, strict=config.strict)
    manifest.counts["records_parsed"] = len(cdr)
    manifest.counts["records_rejected"] = len(cdr.issues)
    if cdr.issues:
        manifest.extra["first_parse_issues"] = [
            {"line": i.line, "reason": i.reason} for i in cdr.issues[:10]
        ]
    with manifest.stage("tower-check"):
        cdr = _drop_unknown_towers(cdr, towers, config, manifest)
    return cdr


def _drop_unknown_towers(cdr: CdrFrame, towers: Mapping[str, Tower], config: AnalysisConfig, manifest: RunManifest) -> CdrFrame:
    unknown = ~cdr.frame["tower_id"].is_in(list(towers))
    n_unknown = int(unknown.sum()) if len(cdr) else 0
    manifest.counts["records_unknown_tower"] = n_unknown
    if n_unknown == 0:
        return cdr
    if config.strict:
        bad = cdr.frame.filter(unknown)["tower_id"][0]
        raise StageError("tower-check", f"CDR references tower {bad!r} missing from the tower table")
    return CdrFrame(cdr.frame.filter(~unknown), cdr.issues)


# ---------------------------------------------------------------------------
# encounters


def run_encounters(
    cdr_path: str | Path,
    towers_path: str | Path,
    config: AnalysisConfig,
    out_dir: str | Path,
) -> RunManifest:
    """Parse the CDR, detect episodes and write ``episodes.csv``."""
    out = _prepare_out_dir(out_dir)
    manifest = RunManifest("encounters", config.snapshot())
    towers = _load_towers(towers_path, manifest)
    cdr = _load_cdr(cdr_path, towers, config, manifest)
    with manifest.stage("presence"):
        presence = presence_table(cdr, config.presence_attribution)
    manifest.counts["presence_events"] = len(presence)
    manifest.counts["users"] = len(presence.users)
    with manifest.stage("encounters"):
        episodes = detect_encounters_table(presence, config.window_seconds, config.workers)
    manifest.counts["episodes"] = len(episodes)
    manifest.counts["encountering_pairs"] = len(pair_counts_columns(episodes)[0])
    with manifest.stage("write"):
        episodes.write_csv(out / EPISODES_FILE)
    manifest.outputs = [EPISODES_FILE, MANIFEST_FILE]
    manifest.write(out)
    return manifest


# ---------------------------------------------------------------------------
# analysis


def _codes_in(src: list[str], dst: list[str]) -> np.ndarray:
    """Index of each ``src`` identifier in the sorted ``dst`` list, or -1."""
    if not src:
        return np.empty(0, dtype=np.int64)
    if not dst:
        return np.full(len(src), -1, dtype=np.int64)
    d = np.asarray(dst, dtype=str)
    s = np.asarray(src, dtype=str)
    pos = np.minimum(np.searchsorted(d, s), len(d) - 1)
    return np.where(d[pos] == s, pos, -1).astype(np.int64)


@dataclass
class FamiliarStrangers:
    """Encountering pairs without a communication tie, coded in graph space."""

    pair_ua: np.ndarray  # episode-table user codes
    pair_ub: np.ndarray
    counts: np.ndarray
    ga: np.ndarray  # graph codes, -1 when the user never appears in the CDR
    gb: np.ndarray
    episode_mask: np.ndarray


def familiar_strangers(episodes: EpisodeTable, graph: CommGraph, filtered: CommGraph) -> FamiliarStrangers:
    ua, ub, counts = pair_counts_columns(episodes)
    mapping = _codes_in(list(episodes.users), list(graph.users))
    ga = mapping[ua] if len(ua) else np.empty(0, dtype=np.int64)
    gb = mapping[ub] if len(ub) else np.empty(0, dtype=np.int64)
    known = (ga >= 0) & (gb >= 0)
    linked = np.zeros(len(ua), dtype=bool)
    if known.any():
        linked[known] = is_edge(graph, ga[known], gb[known])
    dropped = ~filtered.alive & graph.alive
    removed = np.zeros(len(ua), dtype=bool)
    removed[known] = dropped[ga[known]] | dropped[gb[known]]
    # A user unknown to the graph cannot have been removed by the filter.
    keep = ~linked & ~removed
    if not _is_sorted(episodes):
        raise ValueError("episode table must be sorted by pair")
    mask = np.repeat(keep, counts)
    return FamiliarStrangers(ua[keep], ub[keep], counts[keep], ga[keep], gb[keep], mask)


def _is_sorted(table: EpisodeTable) -> bool:
    if len(table) < 2:
        return True
    da = np.diff(table.ua.astype(np.int64))
    db = np.diff(table.ub.astype(np.int64))
    return bool(np.all((da > 0) | ((da == 0) & (db >= 0))))


def _drop_unknown_episode_towers(
    episodes: EpisodeTable, towers: Mapping[str, Tower], config: AnalysisConfig, manifest: RunManifest
) -> EpisodeTable:
    missing = np.array([t not in towers for t in episodes.towers], dtype=bool)
    bad = missing[episodes.tower] if len(episodes) else np.zeros(0, dtype=bool)
    manifest.counts["episodes_unknown_tower"] = int(bad.sum())
    if not bad.any():
        return episodes
    if config.strict:
        name = episodes.towers[int(episodes.tower[np.argmax(bad)])]
        raise StageError("tower-check", f"episode references tower {name!r} missing from the tower table")
    return episodes.take(np.flatnonzero(~bad))


def run_analyze(
    episodes_path: str | Path,
    cdr_path: str | Path,
    towers_path: str | Path,
    config: AnalysisConfig,
    out_dir: str | Path,
) -> RunManifest:
    """Network, temporal and spatial exports over familiar-stranger episodes."""
    out = _prepare_out_dir(out_dir)
    manifest = RunManifest("analyze", config.snapshot())
    towers = _load_towers(towers_path, manifest)
    with manifest.stage("read-episodes"):
        p = _require_file(episodes_path, "episode", "read-episodes")
        manifest.add_input("episodes", p)
        episodes = read_episodes(p)
    manifest.counts["episodes"] = len(episodes)
    cdr = _load_cdr(cdr_path, towers, config, manifest)
    with manifest.stage("tower-check"):
        episodes = _drop_unknown_episode_towers(episodes, towers, config, manifest)

    with manifest.stage("network"):
        graph = build_comm_graph(cdr)
        filtered, removed = filter_high_degree(graph, config.max_degree)
        fs = familiar_strangers(episodes, graph, filtered)
        dist_graph = filtered if config.distance_graph == "filtered" else graph
        known = (fs.ga >= 0) & (fs.gb >= 0)
        distances = np.full(len(fs.counts), -1, dtype=np.int64)
        if known.any():
            distances[known] = batch_distances(dist_graph, fs.ga[known], fs.gb[known])
        curve = curve_from_arrays(fs.counts, distances, parse_buckets(config.distance_buckets))
    manifest.counts["users"] = int(graph.alive.sum())
    manifest.counts["users_removed_by_degree_filter"] = len(removed)
    manifest.counts["comm_edges"] = len(graph.ea)
    manifest.counts["familiar_stranger_pairs"] = len(fs.counts)
    manifest.counts["familiar_stranger_episodes"] = int(fs.episode_mask.sum())
    rho = encounter_distance_spearman(fs.counts, distances)
    manifest.extra["encounter_distance_spearman"] = None if np.isnan(rho) else rho

    fs_episodes = episodes.take(np.flatnonzero(fs.episode_mask))
    exports: dict[str, str] = {"distance_curve.csv": curve.to_csv()}
    with manifest.stage("temporal"):
        exports["hourly_profile.csv"] = hourly_profile(fs_episodes, config.tz_offset).to_csv()
        iet = inter_event_distribution(
            fs_episodes, config.iet_bin_seconds, centered=config.iet_alignment == "centered"
        )
        exports["inter_event.csv"] = iet.to_csv()
        exports["consec_matrix.csv"] = consecutive_time_matrix(fs_episodes, config.tz_offset).to_csv()
    with manifest.stage("spatial"):
        flows = consecutive_flows(fs_episodes, config.popularity)
        exports["flows.csv"] = flows_csv(flows, towers)
        exports["flow_distance.csv"] = flow_distance_curve(flows, towers)
        try:
            fit_json = fit_gravity(flows, towers, config.distance_floor_km).to_json()
        except GravityFitError as exc:
            fit_json = json.dumps({"fitted": False, "reason": str(exc)}, indent=2, sort_keys=True) + "\n"
        exports["gravity_fit.json"] = fit_json
        exports["poi_matrix.csv"] = poi_transition_matrix(flows, towers, config.poi_normalization).to_csv()
        network = reencounter_network(fs_episodes, config.min_edge_pairs)
        exports["reencounter_edges.csv"] = network.to_csv()
        exports["tower_summary.csv"] = tower_summary_csv(tower_summary(fs_episodes))
    manifest.counts["flow_transitions"] = int(flows.count.sum())
    manifest.counts["reencounter_edges"] = len(network.edges)

    with manifest.stage("write"):
        for name in ANALYSIS_FILES:
            _write_text(out / name, exports[name])
    manifest.outputs = list(ANALYSIS_FILES) + [MANIFEST_FILE]
    manifest.write(out)
    return manifest


# ---------------------------------------------------------------------------
# generation


CDR_FILE = "cdr.csv"
TOWERS_FILE = "towers.csv"
SCENARIO_FILE = "scenario.scenario"


def run_generate(scenario: ScenarioConfig, out_dir: str | Path) -> RunManifest:
    """Write ``cdr.csv``, ``towers.csv`` and the resolved scenario."""
    out = _prepare_out_dir(out_dir)
    manifest = RunManifest("generate", {"scenario": scenario.name, "seed": scenario.seed, "days": scenario.days})
    with manifest.stage("generate"):
        frame = generate_cdr_frame(scenario)
    with manifest.stage("write"):
        write_cdr_frame(frame, out / CDR_FILE)
        write_towers(scenario.towers.values(), out / TOWERS_FILE)
        _write_text(out / SCENARIO_FILE, format_scenario(scenario))
    manifest.counts["records"] = len(frame)
    manifest.counts["agents"] = len(scenario.agents)
    manifest.counts["towers"] = len(scenario.towers)
    manifest.outputs = [CDR_FILE, TOWERS_FILE, SCENARIO_FILE, MANIFEST_FILE]
    manifest.extra["digests"] = {name: sha256_file(out / name) for name in (CDR_FILE, TOWERS_FILE, SCENARIO_FILE)}
    manifest.extra["planted_truths"] = dict(scenario.truths)
    manifest.write(out)
    return manifest
