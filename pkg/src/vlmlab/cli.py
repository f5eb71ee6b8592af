"""Command-line harness.

Subcommands:
  spectrum  - per-axis frequency occupancy of an allocation scheme
  sparsity  - temporal position-id density, textual vs absolute encoding
  ground    - parse/validate grounding JSON and echo its canonical form
  train     - toy staged training run on synthetic data
  niah      - needle-in-a-haystack probe grid with CSV/JSON reports

Exit codes: 0 success, 2 configuration error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, mrope, timeline
from .errors import ConfigError, GroundingParseError
from .grounding import parse_grounding_json, serialize_grounding_json
from .harness import (NiahConfig, emit_report, load_stage_config, make_synthetic_batch,
                      train_toy)
from .harness.niah import run_niah_grid
from .seeding import Rng
from .vision import ModelConfig, VisionLanguageModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def _cmd_spectrum(args) -> int:
    cfg = _load_json_config(args.config)
    alloc = mrope.build_frequency_allocation(
        head_dim=cfg.get("head_dim", args.head_dim),
        base=cfg.get("base", args.base),
        scheme=cfg.get("scheme", args.scheme),
        chunk_split=tuple(cfg["chunk_split"]) if "chunk_split" in cfg else None,
    )
    report = mrope.spectrum_report(alloc)
    doc = {"allocation": alloc.to_config(), "axes": report,
           "spans_ends": {axis: mrope.spans_spectrum_ends(alloc, axis)
                          for axis in mrope.AXES}}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sparsity(args) -> int:
    cfg = _load_json_config(args.config)
    duration = cfg.get("duration_s", args.duration)
    spacing = cfg.get("group_spacing_s", args.spacing)
    granularity = cfg.get("granularity_s", args.granularity)
    if duration <= 0 or spacing <= 0:
        raise ConfigError("duration and spacing must be positive")
    frames = [k * spacing for k in range(int(duration // spacing))]
    if not frames:
        raise ConfigError("duration too short for one group")
    seq = timeline.interleave_timestamps(frames, group_size=1)
    doc = {
        "groups": len(seq.frame_groups()),
        "textual_timestamp": timeline.position_id_range_report(seq, "textual_timestamp"),
        "absolute_time": timeline.position_id_range_report(seq, "absolute_time",
                                                           granularity=granularity),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_ground(args) -> int:
    cfg = _load_json_config(args.config)
    kind = cfg.get("kind", args.kind)
    source = cfg.get("input", args.input)
    if kind is None:
        raise ConfigError("ground needs --kind or a config with a 'kind' key")
    if source == "-":
        text = sys.stdin.read()
    else:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"input file not found: {source}") from None
    records = parse_grounding_json(text, kind)
    print(serialize_grounding_json(records))
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load_json_config(args.config)
    stage = load_stage_config(cfg.get("stage", args.stage))
    model_cfg = ModelConfig.from_json(json.dumps(cfg["model"])) if "model" in cfg else ModelConfig()
    rng = Rng(args.seed)
    model = VisionLanguageModel(model_cfg, rng.split("model"))
    batch = make_synthetic_batch(model_cfg, rng.split("data"),
                                 n_examples=cfg.get("examples", 4),
                                 text_len=cfg.get("text_len", 8))
    result = train_toy(model, stage, batch,
                       steps=cfg.get("steps", args.steps),
                       lr=cfg.get("lr", args.lr),
                       scheme=cfg.get("scheme", "sqrt"))
    doc = {
        "schema_version": 1,
        "stage": stage.name,
        "trainable": sorted(stage.trainable),
        "losses": result.losses,
        "schemes_initial": result.per_scheme_initial,
        "schemes_final": result.per_scheme_final,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_niah(args) -> int:
    cfg_dict = _load_json_config(args.config)
    version = cfg_dict.pop("schema_version", 1)
    if version != 1:
        raise ConfigError(f"unsupported niah config schema_version {version}")
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    known = set(NiahConfig.__dataclass_fields__)
    unknown = set(cfg_dict) - known
    if unknown:
        raise ConfigError(f"unknown niah config keys: {sorted(unknown)}")
    for key in ("needle_depths", "durations_min"):
        if key in cfg_dict:
            cfg_dict[key] = tuple(cfg_dict[key])
    cfg = NiahConfig(**cfg_dict)
    alloc = mrope.build_frequency_allocation(cfg.signature_dim)
    grid = run_niah_grid(cfg, alloc)
    json_path, csv_path = emit_report(
        grid["durations_min"], grid["depths"], grid["accuracies"], grid["trials"],
        out_dir=args.out, config=cfg.to_dict())
    worst = min(min(row) for row in grid["accuracies"])
    print(f"wrote {json_path} and {csv_path}; minimum cell accuracy {worst:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlmlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"vlmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="frequency allocation occupancy report")
    p.add_argument("--config", help="JSON file with head_dim/base/scheme/chunk_split")
    p.add_argument("--head-dim", dest="head_dim", type=int, default=24)
    p.add_argument("--base", type=float, default=mrope.DEFAULT_BASE)
    p.add_argument("--scheme", choices=["interleaved", "chunked"], default="interleaved")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("sparsity", help="temporal position-id density report")
    p.add_argument("--config", help="JSON file with duration_s/group_spacing_s/granularity_s")
    p.add_argument("--duration", type=float, default=7200.0, help="clip length in seconds")
    p.add_argument("--spacing", type=float, default=2.0, help="seconds between groups")
    p.add_argument("--granularity", type=float, default=0.1,
                   help="granularity of the absolute-time encoding")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sparsity)

    p = sub.add_parser("ground", help="validate grounding JSON, print canonical form")
    p.add_argument("--config", help="JSON file with kind/input keys")
    p.add_argument("--kind", choices=["box2d", "point", "box3d"])
    p.add_argument("--input", default="-", help="path to a JSON file, or - for stdin")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_ground)

    p = sub.add_parser("train", help="toy staged training on synthetic data")
    p.add_argument("--config", help="JSON file with stage/model/steps/lr/scheme")
    p.add_argument("--stage", default="S0")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the loss curve JSON here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("niah", help="needle-in-a-haystack probe grid")
    p.add_argument("--config", help="JSON file with NiahConfig fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="reports", help="output directory for CSV/JSON")
    p.set_defaults(func=_cmd_niah)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GroundingParseError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
