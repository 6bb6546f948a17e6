"""Command-line front end: ``kcs extract|distance|simulate|suite|synth``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from kcs.features import (
    euclidean_distance,
    template_from_keystrokes,
    templates_from_csv,
    templates_to_csv,
)
from kcs.harness import (
    TABLE1_DIR,
    ZScorePopulation,
    load_experiment,
    load_suite,
    normalize_templates,
    run_suite,
)
from kcs.netsim import event_log_to_csv, run_channel
from kcs.replay import events_to_packets, reconstruct_trace
from kcs.trace import (
    TypistProfile,
    pair_events,
    read_trace,
    select_sample,
    synth_trace,
    text_to_codes,
    validate_trace,
    write_trace,
)
from kcs.typists import make_user_traces


class CommandError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("KCS_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise CommandError(f"KCS_SEED must be an integer, got {raw!r}") from None


def _load_valid_trace(path):
    trace = read_trace(path)
    problems = validate_trace(trace)
    if problems:
        listed = ", ".join(str(v) for v in problems[:20])
        more = f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""
        raise CommandError(f"{path}: invalid trace: {listed}{more}")
    return trace


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_extract(args) -> int:
    trace = _load_valid_trace(args.trace)
    if args.sample is not None:
        trace = select_sample(trace, args.sample, args.seed)
    template = template_from_keystrokes(pair_events(trace), trace.user_id, args.sample_id)
    _emit(templates_to_csv([template]), args.out)
    return 0


def _read_template(path):
    templates = templates_from_csv(Path(path).read_text(encoding="utf-8"))
    if len(templates) != 1:
        raise CommandError(f"{path}: expected exactly one template, found {len(templates)}")
    return templates[0]


def cmd_distance(args) -> int:
    a, b = _read_template(args.template_a), _read_template(args.template_b)
    if args.zscore:
        pop = ZScorePopulation.from_templates(
            templates_from_csv(Path(args.zscore).read_text(encoding="utf-8"))
        )
        va, vb = normalize_templates(a, b, "zscore", pop)
    else:
        va, vb = normalize_templates(a, b, "none")
    print(f"{euclidean_distance(va, vb):.6f}".rstrip("0").rstrip("."))
    return 0


def cmd_simulate(args) -> int:
    spec = load_experiment(args.config)
    trace = _load_valid_trace(args.trace)
    traffic = spec.sub_runs[0][1] if spec.sub_runs else spec.cross_traffic
    sources = tuple(replace(s, phase_seed=s.phase_seed + args.seed) for s in traffic)
    channel = replace(spec.channel, sources=sources, seed=args.seed)
    packets = events_to_packets(trace, spec.event_size_bytes, start_us=spec.warmup_us)
    log = [] if args.event_log else None
    deliveries, stats = run_channel(
        channel, packets, horizon_us=packets[-1].inject_us + spec.tail_us, event_log=log
    )
    received = reconstruct_trace(deliveries, trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(received, out / "received.txt")
    ref = template_from_keystrokes(pair_events(trace), trace.user_id)
    rec = template_from_keystrokes(pair_events(received), trace.user_id)
    summary = {
        "experiment": spec.id,
        "seed": args.seed,
        "event_size_bytes": spec.event_size_bytes,
        "distance_raw_ms": euclidean_distance(ref, rec),
        "stats": stats.to_dict(),
    }
    (out / "stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if log is not None:
        (out / "events.csv").write_text(event_log_to_csv(log))
    return 0


def cmd_suite(args) -> int:
    specs = load_suite(args.config_dir)
    if args.reps is not None:
        specs = [replace(s, repetitions=args.reps) for s in specs]
    if args.users:
        users = [_load_valid_trace(p) for p in args.users]
    else:
        users = make_user_traces()
    reference = _load_valid_trace(args.reference) if args.reference else users[0]
    report = run_suite(specs, reference, users, args.out, base_seed=args.seed)
    for r in report.results:
        print(
            f"exp {r.id}: distance {r.avg_distance:.3f} ({r.distortion_pct:.1f}%), "
            f"loss {r.avg_loss_pct:.2f}%, delay {r.avg_delay_ms:.1f} ms"
        )
    print(f"inter-user baseline: {report.baseline:.3f}")
    return 0


def _load_profile(path) -> tuple[TypistProfile, int]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        profile = TypistProfile(
            mean_hold_us=data["mean_hold_ms"] * 1000,
            sd_hold_us=data["sd_hold_ms"] * 1000,
            mean_gap_us_by_class=[v * 1000 for v in data["mean_gap_ms_by_class"]],
            sd_gap_us_by_class=[v * 1000 for v in data["sd_gap_ms_by_class"]],
            seed=data.get("seed", 0),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CommandError(f"{path}: invalid profile: {exc!r}") from None
    return profile, int(data.get("user_id", 0))


def cmd_synth(args) -> int:
    profile, user_id = _load_profile(args.profile)
    text = Path(args.text).read_text(encoding="utf-8").rstrip("\n")
    trace = synth_trace(profile, text_to_codes(text), args.seed, user_id=user_id)
    write_trace(trace, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kcs", description="Keystroke timing distortion over a simulated channel."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def seed_arg(p):
        p.add_argument("--seed", type=int, default=None, help="seed (default: $KCS_SEED or 0)")

    p = sub.add_parser("extract", help="trace file -> template CSV")
    p.add_argument("trace")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--sample", type=int, default=None, help="draw a contiguous sample first")
    p.add_argument("--sample-id", type=int, default=0)
    seed_arg(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("distance", help="Euclidean distance of two template CSVs")
    p.add_argument("template_a")
    p.add_argument("template_b")
    p.add_argument("--zscore", metavar="POPULATION_CSV", default=None)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("simulate", help="send one trace through a configured channel")
    p.add_argument("config")
    p.add_argument("trace")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--event-log", action="store_true", help="also write events.csv")
    seed_arg(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("suite", help="run a directory of experiment configs")
    p.add_argument("config_dir", nargs="?", default=str(TABLE1_DIR))
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--reps", type=int, default=None, help="override repetitions")
    p.add_argument("--reference", default=None, help="reference trace (default: synthetic)")
    p.add_argument("--users", nargs="+", default=None, help="user traces for the baseline")
    seed_arg(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("synth", help="synthesise a trace from a typist profile")
    p.add_argument("profile", help="JSON profile (milliseconds)")
    p.add_argument("text", help="text file to type")
    p.add_argument("--out", required=True)
    seed_arg(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        return args.func(args)
    except (CommandError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
