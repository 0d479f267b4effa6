"""Command-line entry point: ``generate``, ``encounters`` and ``analyze``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Sequence

from .cdr import CdrError, TowerError
from .config import ConfigError, resolve_config
from .pipeline import StageError, run_analyze, run_encounters, run_generate
from .synthgen import ScenarioError, load_preset, load_scenario, preset_names
from .synthgen.presets import scale


def _analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--window-seconds", type=int)
    p.add_argument("--max-degree", type=int)
    p.add_argument("--iet-bin-seconds", type=int)
    p.add_argument("--min-edge-pairs", type=int)
    p.add_argument("--distance-floor-km", type=float)
    p.add_argument("--tz-offset", type=float)
    p.add_argument("--attribution", choices=("caller", "both"))
    p.add_argument("--workers", type=int, help="default: $ENCOUNTER_ATLAS_WORKERS or CPU count")
    p.add_argument("--strict", action="store_true", default=None, help="fail on the first malformed line")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="encounter-atlas",
        description="Familiar-stranger encounter analysis of call detail records.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic CDR and tower table")
    src = gen.add_mutually_exclusive_group(required=True)
    src.add_argument("scenario", nargs="?", help="scenario file")
    src.add_argument("--preset", choices=preset_names())
    gen.add_argument("--seed", type=int, help="override the scenario seed")
    gen.add_argument("--records", type=int, help="target record count (scale preset only)")
    gen.add_argument("--out-dir", required=True)

    enc = sub.add_parser("encounters", help="detect encounter episodes")
    enc.add_argument("cdr")
    enc.add_argument("towers")
    _analysis_flags(enc)

    ana = sub.add_parser("analyze", help="write the analysis export bundle")
    ana.add_argument("episodes")
    ana.add_argument("cdr")
    ana.add_argument("towers")
    _analysis_flags(ana)
    return parser


_FLAG_KEYS = (
    "window_seconds",
    "max_degree",
    "iet_bin_seconds",
    "min_edge_pairs",
    "distance_floor_km",
    "tz_offset",
    "attribution",
    "workers",
    "strict",
    "seed",
)


def _config_from(args: argparse.Namespace):
    overrides = {k: getattr(args, k) for k in _FLAG_KEYS}
    return resolve_config(args.config, overrides)


def _scenario_from(args: argparse.Namespace):
    if args.preset == "scale":
        kwargs = {}
        if args.records is not None:
            kwargs["records"] = args.records
        if args.seed is not None:
            kwargs["seed"] = args.seed
        return scale(**kwargs)
    if args.records is not None:
        raise ScenarioError("--records only applies to the scale preset")
    scenario = load_preset(args.preset) if args.preset else load_scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    return scenario


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            try:
                scenario = _scenario_from(args)
            except (ScenarioError, OSError) as exc:
                raise StageError("scenario", str(exc)) from exc
            manifest = run_generate(scenario, args.out_dir)
        else:
            try:
                config = _config_from(args)
            except (ConfigError, OSError) as exc:
                raise StageError("config", str(exc)) from exc
            if args.command == "encounters":
                manifest = run_encounters(args.cdr, args.towers, config, args.out_dir)
            else:
                manifest = run_analyze(args.episodes, args.cdr, args.towers, config, args.out_dir)
    except StageError as exc:
        print(f"encounter-atlas {args.command}: error {exc}", file=sys.stderr)
        return 1
    except (CdrError, TowerError) as exc:  # pragma: no cover - stages wrap these
        print(f"encounter-atlas {args.command}: error {exc}", file=sys.stderr)
        return 1
    counts = ", ".join(f"{k}={v}" for k, v in sorted(manifest.counts.items()))
    print(f"{args.command}: wrote {len(manifest.outputs)} files to {args.out_dir} ({counts})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
