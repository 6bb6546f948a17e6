"""Experiment definitions, repetition loop, baseline and reports."""

from __future__ import annotations

import configparser
import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from kcs.features import TEMPLATE_SIZE, Template, euclidean_distance, template_from_keystrokes
from kcs.netsim import ChannelConfig, ChannelStats, SourceKind, TrafficSourceSpec, run_channel
from kcs.replay import DEFAULT_EVENT_SIZE_BYTES, events_to_packets, reconstruct_trace
from kcs.trace import KeystrokeTrace, pair_events, select_sample

NORMALIZATIONS = ("none", "zscore")
REPORT_HEADER = (
    "experiment",
    "avg_distance",
    "sd_distance",
    "avg_loss_pct",
    "avg_delay_ms",
    "avg_jitter_ms",
    "distortion_pct",
)
DEFAULT_REPETITIONS = 40
DEFAULT_SAMPLE_SIZE = 122


class HarnessError(ValueError):
    pass


class ConfigError(HarnessError):
    pass


# --------------------------------------------------------------------------
# Normalisation


@dataclass(frozen=True)
class ZScorePopulation:
    """Per-dimension mean and scale of a population of template vectors."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_templates(cls, templates: Sequence[Template]) -> ZScorePopulation:
        if not templates:
            raise HarnessError("population needs at least one template")
        vecs = np.stack([t.vector for t in templates])
        sd = vecs.std(axis=0)
        return cls(vecs.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return (vec - self.mean) / self.scale


def normalize_templates(
    reference: Template,
    received: Template,
    mode: str = "none",
    population: ZScorePopulation | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Map two templates to comparable 20-vectors.

    ``"none"`` returns the raw millisecond vectors; ``"zscore"`` scales each
    dimension by the baseline population (dimensions with zero spread keep
    scale 1).
    """
    if mode == "none":
        return reference.vector.copy(), received.vector.copy()
    if mode == "zscore":
        if population is None:
            raise HarnessError("zscore normalisation needs a baseline population")
        return population.apply(reference.vector), population.apply(received.vector)
    raise HarnessError(f"unknown normalisation {mode!r}")


def baseline_population(
    reference_trace: KeystrokeTrace,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    repetitions: int = DEFAULT_REPETITIONS,
    base_seed: int = 0,
    fixed_sample: bool = False,
) -> ZScorePopulation:
    """Clean reference templates of the baseline repetitions."""
    templates = [
        _sample_template(reference_trace, sample_size, _sample_seed(base_seed, r, fixed_sample), r)
        for r in range(1, repetitions + 1)
    ]
    return ZScorePopulation.from_templates(templates)


# --------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment configuration.

    ``sub_runs`` turns the experiment into a sweep: each entry is a
    ``(label, cross_traffic)`` pair run with the full repetition count, and
    the experiment reports the mean over sub-runs.
    """

    id: int
    channel: ChannelConfig
    cross_traffic: tuple[TrafficSourceSpec, ...] = ()
    repetitions: int = DEFAULT_REPETITIONS
    sample_size: int = DEFAULT_SAMPLE_SIZE
    normalization: str = "zscore"
    label: str = ""
    event_size_bytes: int = DEFAULT_EVENT_SIZE_BYTES
    warmup_us: int = 0
    phase_window_us: int = 1_000_000
    tail_us: int = 2_000_000
    fixed_sample: bool = False
    sub_runs: tuple[tuple[str, tuple[TrafficSourceSpec, ...]], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "cross_traffic", tuple(self.cross_traffic))
        object.__setattr__(
            self, "sub_runs", tuple((lbl, tuple(src)) for lbl, src in self.sub_runs)
        )
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.sample_size < 2:
            raise ConfigError("sample_size must be >= 2")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class Repetition:
    seed: int
    distance: float
    distance_raw_ms: float
    stats: ChannelStats


@dataclass
class ExperimentResult:
    id: int
    label: str
    normalization: str
    avg_distance: float
    sd_distance: float
    avg_distance_raw_ms: float
    sd_distance_raw_ms: float
    avg_loss_pct: float
    avg_delay_ms: float
    avg_jitter_ms: float
    per_repetition: list[Repetition] = field(default_factory=list)
    sub_results: list[ExperimentResult] = field(default_factory=list)
    distortion_pct: float | None = None
    distortion_raw_pct: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "normalization": self.normalization,
            "avg_distance": self.avg_distance,
            "sd_distance": self.sd_distance,
            "avg_distance_raw_ms": self.avg_distance_raw_ms,
            "sd_distance_raw_ms": self.sd_distance_raw_ms,
            "avg_loss_pct": self.avg_loss_pct,
            "avg_delay_ms": self.avg_delay_ms,
            "avg_jitter_ms": self.avg_jitter_ms,
            "distortion_pct": self.distortion_pct,
            "distortion_raw_pct": self.distortion_raw_pct,
            "per_repetition": [
                {
                    "seed": r.seed,
                    "distance": r.distance,
                    "distance_raw_ms": r.distance_raw_ms,
                    "stats": r.stats.to_dict(),
                }
                for r in self.per_repetition
            ],
            "sub_results": [s.to_dict() for s in self.sub_results],
        }


def _sample_seed(base_seed: int, rep: int, fixed: bool) -> int:
    return base_seed if fixed else base_seed + rep


def _sample_template(trace: KeystrokeTrace, n: int, seed: int, sample_id: int) -> Template:
    sample = select_sample(trace, n, seed)
    return template_from_keystrokes(pair_events(sample), sample.user_id, sample_id)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([p & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def run_repetition(
    spec: ExperimentSpec,
    cross_traffic: Sequence[TrafficSourceSpec],
    reference_trace: KeystrokeTrace,
    seed: int,
    sample_seed: int,
    population: ZScorePopulation | None,
) -> Repetition:
    sample = select_sample(reference_trace, spec.sample_size, sample_seed)
    ref = template_from_keystrokes(pair_events(sample), sample.user_id, seed)

    rng = np.random.default_rng(_derived_seed(seed, 0x5EED))
    offset = spec.warmup_us + int(rng.integers(0, max(spec.phase_window_us, 1)))
    packets = events_to_packets(sample, spec.event_size_bytes, start_us=offset)
    horizon = packets[-1].inject_us + spec.tail_us
    sources = tuple(
        replace(src, phase_seed=_derived_seed(src.phase_seed, seed, i))
        for i, src in enumerate(cross_traffic)
    )
    channel = replace(spec.channel, sources=sources, seed=seed)
    deliveries, stats = run_channel(channel, packets, horizon_us=horizon)

    received = reconstruct_trace(deliveries, sample)
    rec = template_from_keystrokes(pair_events(received), sample.user_id, seed)
    raw = euclidean_distance(ref, rec)
    if spec.normalization == "none":
        dist = raw
    else:
        dist = euclidean_distance(*normalize_templates(ref, rec, spec.normalization, population))
    return Repetition(seed, dist, raw, stats)


def _aggregate(spec: ExperimentSpec, label: str, reps: list[Repetition]) -> ExperimentResult:
    d = np.array([r.distance for r in reps])
    raw = np.array([r.distance_raw_ms for r in reps])
    return ExperimentResult(
        id=spec.id,
        label=label,
        normalization=spec.normalization,
        avg_distance=float(d.mean()),
        sd_distance=float(d.std()),
        avg_distance_raw_ms=float(raw.mean()),
        sd_distance_raw_ms=float(raw.std()),
        avg_loss_pct=float(np.mean([r.stats.link_loss_pct for r in reps])),
        avg_delay_ms=float(np.mean([r.stats.avg_delay_us for r in reps])) / 1000,
        avg_jitter_ms=float(np.mean([r.stats.jitter_us for r in reps])) / 1000,
        per_repetition=reps,
    )


def run_experiment(
    spec: ExperimentSpec,
    reference_trace: KeystrokeTrace,
    base_seed: int = 0,
    population: ZScorePopulation | None = None,
) -> ExperimentResult:
    """Run every repetition of ``spec`` (seed ``base_seed + r``, r = 1..N).

    A zscore experiment without an explicit ``population`` uses the clean
    reference templates of the same seeds.
    """
    if spec.normalization == "zscore" and population is None:
        population = baseline_population(
            reference_trace, spec.sample_size, DEFAULT_REPETITIONS, base_seed, spec.fixed_sample
        )
    runs = spec.sub_runs or (("", spec.cross_traffic),)
    subs = []
    for sub_label, traffic in runs:
        reps = [
            run_repetition(
                spec,
                traffic,
                reference_trace,
                base_seed + r,
                _sample_seed(base_seed, r, spec.fixed_sample),
                population,
            )
            for r in range(1, spec.repetitions + 1)
        ]
        subs.append(_aggregate(spec, sub_label or spec.label, reps))
    if len(subs) == 1:
        return subs[0]
    pooled = [r for s in subs for r in s.per_repetition]
    d = np.array([r.distance for r in pooled])
    raw = np.array([r.distance_raw_ms for r in pooled])
    return ExperimentResult(
        id=spec.id,
        label=spec.label,
        normalization=spec.normalization,
        avg_distance=float(np.mean([s.avg_distance for s in subs])),
        sd_distance=float(d.std()),
        avg_distance_raw_ms=float(np.mean([s.avg_distance_raw_ms for s in subs])),
        sd_distance_raw_ms=float(raw.std()),
        avg_loss_pct=float(np.mean([s.avg_loss_pct for s in subs])),
        avg_delay_ms=float(np.mean([s.avg_delay_ms for s in subs])),
        avg_jitter_ms=float(np.mean([s.avg_jitter_ms for s in subs])),
        sub_results=subs,
    )


# --------------------------------------------------------------------------
# Inter-user baseline and distortion


def inter_user_distances(
    traces: Sequence[KeystrokeTrace],
    pairs: int,
    seed: int,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    mode: str = "none",
    population: ZScorePopulation | None = None,
) -> list[float]:
    if len(traces) < 2:
        raise HarnessError("inter-user baseline needs at least two users")
    rng = np.random.default_rng(seed)
    out = []
    for p in range(pairs):
        i, j = rng.choice(len(traces), size=2, replace=False)
        s = _derived_seed(seed, p)
        a = _sample_template(traces[i], sample_size, s, p)
        b = _sample_template(traces[j], sample_size, s, p)
        out.append(euclidean_distance(*normalize_templates(a, b, mode, population)))
    return out


def inter_user_baseline(
    traces: Sequence[KeystrokeTrace],
    pairs: int,
    seed: int,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    mode: str = "none",
    population: ZScorePopulation | None = None,
) -> float:
    """Mean template distance between randomly paired users (clean samples)."""
    return float(np.mean(inter_user_distances(traces, pairs, seed, sample_size, mode, population)))


def distortion_pct(avg_distance: float, baseline: float) -> float:
    if not baseline > 0:
        raise HarnessError("degenerate baseline")
    return 100.0 * avg_distance / baseline


# --------------------------------------------------------------------------
# Suite and reports


@dataclass
class SuiteReport:
    base_seed: int
    normalization: str
    baseline: float
    baseline_sd: float
    baseline_raw_ms: float
    results: list[ExperimentResult]

    def to_dict(self) -> dict:
        return {
            "base_seed": self.base_seed,
            "normalization": self.normalization,
            "baseline": {
                "avg_distance": self.baseline,
                "sd_distance": self.baseline_sd,
                "avg_distance_raw_ms": self.baseline_raw_ms,
            },
            "experiments": [r.to_dict() for r in self.results],
        }


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def report_csv(report: SuiteReport, raw: bool = False) -> str:
    """Table of experiment rows plus a final ``baseline`` row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in report.results:
        w.writerow(
            [
                r.id,
                _fmt(r.avg_distance_raw_ms if raw else r.avg_distance),
                _fmt(r.sd_distance_raw_ms if raw else r.sd_distance),
                _fmt(r.avg_loss_pct),
                _fmt(r.avg_delay_ms),
                _fmt(r.avg_jitter_ms),
                _fmt(r.distortion_raw_pct if raw else r.distortion_pct),
            ]
        )
    base = report.baseline_raw_ms if raw else report.baseline
    w.writerow(["baseline", _fmt(base), "" if raw else _fmt(report.baseline_sd), "", "", "", ""])
    return buf.getvalue()


def write_report(report: SuiteReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {
        "csv": out / "report.csv",
        "raw_csv": out / "report_raw_ms.csv",
        "json": out / "report.json",
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["csv"].write_text(report_csv(report), encoding="utf-8")
        paths["raw_csv"].write_text(report_csv(report, raw=True), encoding="utf-8")
        paths["json"].write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise HarnessError(f"cannot write report to {out}: {exc}") from exc
    return paths


def assemble_report(
    results: list[ExperimentResult],
    baseline: float,
    baseline_sd: float,
    baseline_raw_ms: float,
    base_seed: int = 0,
    normalization: str = "zscore",
) -> SuiteReport:
    """Attach distortion percentages to ``results`` and wrap them in a report."""
    for r in results:
        r.distortion_pct = distortion_pct(r.avg_distance, baseline)
        r.distortion_raw_pct = distortion_pct(r.avg_distance_raw_ms, baseline_raw_ms)
    return SuiteReport(base_seed, normalization, baseline, baseline_sd, baseline_raw_ms, results)


def run_suite(
    specs: Sequence[ExperimentSpec],
    reference_trace: KeystrokeTrace,
    users: Sequence[KeystrokeTrace],
    out_dir=None,
    base_seed: int = 0,
    pairs: int = DEFAULT_REPETITIONS,
) -> SuiteReport:
    """Run ``specs`` and the inter-user baseline; optionally write the report.

    Distances are reported in the normalisation of the first spec; the raw
    millisecond distances are always reported alongside.
    """
    if not specs:
        raise HarnessError("no experiments to run")
    specs = sorted(specs, key=lambda s: s.id)
    first = next((s for s in specs if s.id == 1), specs[0])
    mode = first.normalization
    sample_size = first.sample_size
    population = baseline_population(
        reference_trace, sample_size, first.repetitions, base_seed, first.fixed_sample
    )
    results = []
    for spec in specs:
        try:
            results.append(run_experiment(spec, reference_trace, base_seed, population))
        except Exception as exc:
            raise HarnessError(f"experiment {spec.id} failed: {exc}") from exc
    dists = inter_user_distances(users, pairs, base_seed, sample_size, mode, population)
    raw = inter_user_baseline(users, pairs, base_seed, sample_size, "none")
    report = assemble_report(
        results, float(np.mean(dists)), float(np.std(dists)), raw, base_seed, mode
    )
    if out_dir is not None:
        write_report(report, out_dir)
    return report


# --------------------------------------------------------------------------
# Config files


_EXPERIMENT_KEYS = {
    "id": int,
    "label": str,
    "repetitions": int,
    "sample_size": int,
    "normalization": str,
    "event_size_bytes": int,
    "warmup_ms": float,
    "phase_window_ms": float,
    "tail_ms": float,
    "fixed_sample": bool,
}
_CHANNEL_KEYS = {
    "bottleneck_bps": int,
    "queue_capacity_pkts": int,
    "base_propagation_us": int,
    "rto_initial_us": int,
    "rto_max_us": int,
}
_CBR_KEYS = {"total_pps": str, "size_bytes": int, "streams": int}
_SOURCE_KEYS = {
    "kind": str,
    "rate_pps": float,
    "size_bytes": int,
    "on_ms": float,
    "off_ms": float,
    "start_ms": float,
    "stop_ms": float,
    "phase_seed": int,
}


def _read_section(cp: configparser.ConfigParser, name: str, schema: dict, required=()) -> dict:
    sec = cp[name]
    out = {}
    for key, value in sec.items():
        if key not in schema:
            raise ConfigError(f"[{name}] unknown field {key!r}")
        typ = schema[key]
        try:
            if typ is bool:
                out[key] = sec.getboolean(key)
            else:
                out[key] = typ(value)
        except ValueError:
            raise ConfigError(f"[{name}] field {key!r}: cannot parse {value!r}") from None
    for key in required:
        if key not in out:
            raise ConfigError(f"[{name}] missing required field {key!r}")
    return out


def _cbr_pair(total_pps: float, size_bytes: int, streams: int) -> tuple[TrafficSourceSpec, ...]:
    # Equal-rate streams sharing the total packet rate.
    return tuple(
        TrafficSourceSpec(SourceKind.CBR, total_pps / streams, size_bytes, name=f"cbr{k}")
        for k in range(streams)
    )


def parse_experiment(text: str, source: str = "<config>") -> ExperimentSpec:
    """Parse an experiment ``.cfg`` file (INI syntax).

    Sections: ``[experiment]``, ``[channel]``, optional ``[cbr]`` (equal-rate
    CBR streams; a comma-separated ``total_pps`` makes a sweep) and any
    number of ``[source:NAME]`` sections for extra CBR/ONOFF sources.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for name in cp.sections():
        if name not in ("experiment", "channel", "cbr") and not name.startswith("source:"):
            raise ConfigError(f"{source}: unknown section [{name}]")
    for name in ("experiment", "channel"):
        if not cp.has_section(name):
            raise ConfigError(f"{source}: missing section [{name}]")
    exp = _read_section(cp, "experiment", _EXPERIMENT_KEYS, required=("id",))
    chan = _read_section(cp, "channel", _CHANNEL_KEYS, required=("bottleneck_bps",))

    extra = []
    for name in cp.sections():
        if not name.startswith("source:"):
            continue
        s = _read_section(cp, name, _SOURCE_KEYS, required=("kind", "rate_pps", "size_bytes"))
        try:
            extra.append(
                TrafficSourceSpec(
                    kind=SourceKind(s["kind"].upper()),
                    rate_pps=s["rate_pps"],
                    size_bytes=s["size_bytes"],
                    on_ms=s.get("on_ms", 0.0),
                    off_ms=s.get("off_ms", 0.0),
                    start_us=round(s.get("start_ms", 0.0) * 1000),
                    stop_us=round(s["stop_ms"] * 1000) if "stop_ms" in s else 2**62,
                    phase_seed=s.get("phase_seed", 0),
                    name=name.split(":", 1)[1],
                )
            )
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None

    sweep: list[float] = []
    cbr: dict = {}
    if cp.has_section("cbr"):
        cbr = _read_section(cp, "cbr", _CBR_KEYS, required=("total_pps", "size_bytes"))
        try:
            sweep = [float(x) for x in cbr["total_pps"].split(",") if x.strip()]
        except ValueError:
            raise ConfigError("[cbr] field 'total_pps': expected numbers") from None
        if not sweep:
            raise ConfigError("[cbr] field 'total_pps' is empty")
    streams = cbr.get("streams", 2)

    def traffic(total: float) -> tuple[TrafficSourceSpec, ...]:
        return _cbr_pair(total, cbr["size_bytes"], streams) + tuple(extra)

    cross = traffic(sweep[0]) if len(sweep) == 1 else tuple(extra)
    sub_runs = tuple((f"C={c:g}", traffic(c)) for c in sweep) if len(sweep) > 1 else ()
    try:
        channel = ChannelConfig(**chan)
        return ExperimentSpec(
            id=exp["id"],
            channel=channel,
            cross_traffic=cross,
            repetitions=exp.get("repetitions", DEFAULT_REPETITIONS),
            sample_size=exp.get("sample_size", DEFAULT_SAMPLE_SIZE),
            normalization=exp.get("normalization", "zscore"),
            label=exp.get("label", ""),
            event_size_bytes=exp.get("event_size_bytes", DEFAULT_EVENT_SIZE_BYTES),
            warmup_us=round(exp.get("warmup_ms", 0.0) * 1000),
            phase_window_us=round(exp.get("phase_window_ms", 1000.0) * 1000),
            tail_us=round(exp.get("tail_ms", 2000.0) * 1000),
            fixed_sample=exp.get("fixed_sample", False),
            sub_runs=sub_runs,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_experiment(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_experiment(text, str(path))


def load_suite(config_dir) -> list[ExperimentSpec]:
    paths = sorted(Path(config_dir).glob("*.cfg"))
    if not paths:
        raise ConfigError(f"no .cfg files in {config_dir}")
    specs = [load_experiment(p) for p in paths]
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate experiment ids in {config_dir}: {ids}")
    return sorted(specs, key=lambda s: s.id)


TABLE1_DIR = Path(__file__).parent / "experiments" / "table1"


def table1_specs() -> list[ExperimentSpec]:
    """The seven shipped experiment presets."""
    return load_suite(TABLE1_DIR)
