"""Acceptance suite: one test per criterion, summarised at the end of the run."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from oracles import brute_digraphs, brute_template, tick_channel

from kcs.features import QWERTY, Template, adjacency_class, euclidean_distance, extract_digraph_features
from kcs.features import template_from_keystrokes
from kcs.harness import (
    ExperimentResult,
    _sample_template,
    assemble_report,
    baseline_population,
    normalize_templates,
    report_csv,
    run_experiment,
    run_repetition,
    run_suite,
    table1_specs,
)
from kcs.netsim import (
    KEYSTROKE_FLOW,
    ChannelConfig,
    Packet,
    SourceKind,
    TrafficSourceSpec,
    audit_event_log,
    run_channel,
    source_times,
)
from kcs.replay import events_to_packets, reconstruct_trace
from kcs.trace import Keystroke, TypistProfile, pair_events, select_sample, synth_trace, validate_trace
from kcs.typists import corpus_codes

MBPS = 1_000_000
CODES = [*range(65, 91), *range(48, 58), 32, 13, 44, 46, 59, 39]


def random_sample(rng, n):
    """Keystrokes with free rollover, ordered by press time."""
    codes = rng.choice(CODES, size=n)
    press = np.cumsum(rng.integers(0, 500_000, size=n)) + rng.integers(0, 10**8)
    holds = rng.integers(0, 400_000, size=n)
    return [Keystroke(int(c), int(p), int(p + h)) for c, p, h in zip(codes, press, holds)]


def five_hundred_samples():
    rng = np.random.default_rng(2024)
    return [random_sample(rng, int(rng.integers(2, 201))) for _ in range(500)]


def specs_by_id():
    return {s.id: s for s in table1_specs()}


def two_cbr(total_pps, size):
    return tuple(
        TrafficSourceSpec(SourceKind.CBR, total_pps / 2, size, name=f"cbr{k}") for k in range(2)
    )


@pytest.mark.criterion(1, "feature formulas and class means match brute-force oracle")
def test_c1_feature_oracle(record_property):
    samples = five_hundred_samples()
    t0 = time.perf_counter()
    worst = 0.0
    for ks in samples:
        raw = [(k.key_code, k.press_us, k.release_us) for k in ks]
        want = brute_digraphs(raw)
        got = extract_digraph_features(ks)
        for g, w in zip(got, want):
            assert (g.pr_us, g.pp_us, g.rr_us, g.rp_abs_us) == (w["pr"], w["pp"], w["rr"], w["rp"])
        classes = [adjacency_class(QWERTY, a[0], b[0]) for a, b in zip(raw, raw[1:])]
        table = np.array(brute_template(want, classes))
        worst = max(worst, float(np.max(np.abs(template_from_keystrokes(ks).values - table))))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |diff| {worst:.2e} ms, {elapsed:.2f} s")
    assert worst <= 1e-9
    assert elapsed < 5.0


@pytest.mark.criterion(2, "PP = PR + signed RP and n-1 digraphs, exactly")
def test_c2_identities(record_property):
    checked = 0
    for ks in five_hundred_samples():
        feats = extract_digraph_features(ks)
        assert len(feats) == len(ks) - 1
        for a, b, f in zip(ks, ks[1:], feats):
            signed_rp = b.press_us - a.release_us
            assert f.pp_us == f.pr_us + signed_rp
            checked += 1
    record_property("detail", f"{checked} digraphs")


@pytest.mark.criterion(3, "time shift leaves templates and distances unchanged")
def test_c3_shift_invariance(record_property):
    fixed = Template(np.full((5, 4), 123.456), (1, 1, 1, 1, 1))
    samples = five_hundred_samples()[:200]
    for delta in (1, 1_000_000, 3_600_000_000):
        for ks in samples:
            moved = [Keystroke(k.key_code, k.press_us + delta, k.release_us + delta) for k in ks]
            a, b = template_from_keystrokes(ks), template_from_keystrokes(moved)
            assert np.array_equal(a.values, b.values)
            assert euclidean_distance(a, fixed) == euclidean_distance(b, fixed)
    record_property("detail", f"{len(samples)} samples x 3 shifts")


@pytest.mark.criterion(4, "distance is a metric; all-ones difference gives sqrt(20)")
def test_c4_metric(record_property):
    rng = np.random.default_rng(7)
    worst = -math.inf
    for _ in range(1000):
        a, b, c = (template_from_keystrokes(random_sample(rng, int(rng.integers(2, 40)))) for _ in range(3))
        assert euclidean_distance(a, b) == euclidean_distance(b, a)
        assert euclidean_distance(a, a) == 0.0
        if not np.array_equal(a.vector, b.vector):
            assert euclidean_distance(a, b) > 0.0
        slack = euclidean_distance(a, c) - euclidean_distance(a, b) - euclidean_distance(b, c)
        worst = max(worst, slack)
        assert slack <= 1e-9
    root20 = euclidean_distance(np.zeros(20), np.ones(20))
    record_property("detail", f"sqrt20 = {root20:.6f}, worst triangle slack {worst:.2e}")
    assert abs(root20 - 4.472136) <= 1e-6


@pytest.mark.criterion(5, "no cross traffic gives distance exactly 0 in all 40 repetitions")
def test_c5_constant_delay_zero(reference, record_property):
    spec = replace(specs_by_id()[1], normalization="none")
    res = run_experiment(spec, reference)
    dists = [r.distance for r in res.per_repetition]
    record_property("detail", f"{len(dists)} reps, max distance {max(dists)}")
    assert len(dists) == 40
    assert all(d == 0.0 for d in dists)


def oracle_scenarios():
    rng = np.random.default_rng(99)
    out = []
    for k in range(24):
        bps = [MBPS, 2 * MBPS, 10 * MBPS][k % 3]
        n_keys = int(rng.integers(10, 80))
        gaps = rng.integers(0, 4000 if bps > MBPS else 20000, size=n_keys)
        key_times = np.cumsum(gaps).tolist()
        key_size = int(rng.integers(60, 200))
        cross = []
        budget = 200 - n_keys
        for j in range(int(rng.integers(1, 3))):
            size = int(rng.choice([200, 512, 1024, 1400]))
            span = key_times[-1] + 1
            # rate chosen so the flow fits the packet budget over the scenario span
            count = int(rng.integers(5, max(6, budget // 2)))
            rate = max(count * 1e6 / span, 1.0)
            cross.append(TrafficSourceSpec(SourceKind.CBR, round(rate, 1), size,
                                           start_us=int(rng.integers(0, 2000))))
        cap = int(rng.integers(1, 8))
        rto = int(rng.integers(1000, 8000))
        out.append((bps, cap, int(rng.integers(0, 2000)), key_times, key_size, tuple(cross), rto))
    return out


@pytest.mark.criterion(6, "event-driven delays equal a 1 us tick brute-force model")
def test_c6_queueing_oracle(record_property):
    t0 = time.perf_counter()
    drops_seen = 0
    scenarios = oracle_scenarios()
    for bps, cap, prop, key_times, key_size, cross, rto in scenarios:
        pk = [Packet(KEYSTROKE_FLOW, i, key_size, t) for i, t in enumerate(key_times)]
        horizon = key_times[-1] + 1
        cfg = ChannelConfig(bps, cap, prop, cross, rto_initial_us=rto, rto_max_us=4 * rto)
        got, stats = run_channel(cfg, pk, horizon_us=horizon)
        flows = [[(int(t), s.size_bytes) for t in source_times(s, horizon)] for s in cross]
        assert len(pk) + sum(len(f) for f in flows) <= 200
        want, drops = tick_channel(bps, cap, prop, [(t, key_size) for t in key_times], flows, rto, 4 * rto)
        assert [d.deliver_us for d in got] == want
        assert stats.drops == drops
        drops_seen += drops
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{len(scenarios)} scenarios, {drops_seen} drops, {elapsed:.2f} s")
    assert len(scenarios) >= 20 and drops_seen > 0
    assert elapsed < 10.0


def _loss_at(load, reference, seconds=35):
    size = 1024
    total_pps = load * MBPS / (size * 8)
    sample = select_sample(reference, 122, 1)
    pk = events_to_packets(sample, start_us=(seconds - 20) * 1_000_000)
    cfg = ChannelConfig(MBPS, 50, sources=two_cbr(total_pps, size))
    _, stats = run_channel(cfg, pk, horizon_us=seconds * 1_000_000)
    return stats


@pytest.mark.criterion(7, "85% CBR load never drops; >= 98% sustained 30 s drops")
def test_c7_load_threshold(reference, record_property):
    low = _loss_at(0.85, reference)
    high = {load: _loss_at(load, reference) for load in (0.98, 0.99, 1.00, 1.02, 1.05)}
    summary = ", ".join(f"{int(round(l * 100))}%: {s.link_loss_pct:.3f}%" for l, s in high.items())
    record_property("detail", f"85%: {low.link_loss_pct:.3f}%; {summary}")
    assert low.drops == 0
    assert all(s.link_loss_pct > 0 for s in high.values())


@pytest.mark.criterion(8, "C sweep 10..115: delay non-decreasing, distance ratio >= 1.5")
def test_c8_congestion_monotone(reference, record_property):
    base = specs_by_id()[3]
    t0 = time.perf_counter()
    population = baseline_population(reference, base.sample_size, 40, 0)
    results = {}
    for c in (10, 50, 100, 110, 115):
        spec = replace(base, cross_traffic=two_cbr(c, 1024))
        results[c] = run_experiment(spec, reference, 0, population)
    elapsed = time.perf_counter() - t0
    delays = [results[c].avg_delay_ms for c in sorted(results)]
    ratio = results[115].avg_distance / results[10].avg_distance
    record_property(
        "detail",
        "delay ms " + " ".join(f"{d:.2f}" for d in delays) + f"; ratio {ratio:.2f}; {elapsed:.1f} s",
    )
    assert all(b >= a for a, b in zip(delays, delays[1:]))
    assert ratio >= 1.5
    assert elapsed < 60.0


def _audited_run(cfg, sample, start_us):
    pk = events_to_packets(sample, start_us=start_us)
    log = []
    deliveries, stats = run_channel(cfg, pk, horizon_us=pk[-1].inject_us + 2_000_000, event_log=log)
    sizes = {(KEYSTROKE_FLOW, p.seq): p.size_bytes for p in pk}
    names = cfg.flow_names()
    for i, src in enumerate(cfg.sources, start=1):
        for k, _ in enumerate(source_times(src, pk[-1].inject_us + 2_000_000)):
            sizes[(names[i], k)] = src.size_bytes
    problems = audit_event_log(log, cfg, sizes)
    assert problems == [], problems[:5]
    assert len(deliveries) == len(pk)
    assert [d.seq for d in deliveries] == list(range(len(pk)))
    times = [d.deliver_us for d in deliveries]
    assert all(b > a for a, b in zip(times, times[1:]))
    assert validate_trace(reconstruct_trace(deliveries, sample)) == []
    return stats


@pytest.mark.criterion(9, "every keystroke delivered once, in order (event-log audit)")
def test_c9_reliability(reference, record_property):
    runs = drops = retx = 0
    specs = specs_by_id()
    for exp_id in (1, 3, 4, 5):
        spec = specs[exp_id]
        for seed in (1, 2, 3):
            sample = select_sample(reference, 122, seed)
            cfg = replace(spec.channel, sources=spec.cross_traffic)
            stats = _audited_run(cfg, sample, spec.warmup_us)
            runs += 1
            drops += stats.drops
            retx += stats.retransmissions
    rng = np.random.default_rng(5)
    for k in range(20):
        sample = select_sample(reference, int(rng.integers(10, 122)), k)
        cfg = ChannelConfig(
            MBPS, int(rng.integers(1, 4)),
            sources=two_cbr(float(rng.integers(120, 250)), int(rng.choice([512, 1024, 1400]))),
            rto_initial_us=int(rng.integers(20_000, 200_000)),
        )
        stats = _audited_run(cfg, sample, 0)
        runs += 1
        drops += stats.drops
        retx += stats.retransmissions
    record_property("detail", f"{runs} runs, {drops} drops, {retx} retransmitted keystrokes")
    assert retx > 0


@pytest.mark.criterion(10, "distance 1.068 over baseline 8.5 reports 12.6% distortion")
def test_c10_distortion_ratio(record_property):
    result = ExperimentResult(1, "exp1", "zscore", 1.068, 0.0, 1.068, 0.0, 0.0, 0.0, 0.0)
    report = assemble_report([result], 8.5, 0.0, 8.5)
    row = report_csv(report).splitlines()[1].split(",")
    value = float(row[-1])
    record_property("detail", f"{value:.3f}%")
    assert abs(value - 12.6) <= 0.1


@pytest.mark.criterion(11, "inter-user distance beats exp-3 distortion for >= 38/40 seeds")
def test_c11_separation(record_property):
    a = TypistProfile(90_000, 6_000, [200_000] * 5, [6_000] * 5, seed=11)
    b = TypistProfile(125_000, 6_000, [270_000] * 5, [6_000] * 5, seed=22)
    codes = corpus_codes(1500)
    ta, tb = synth_trace(a, codes, 0, user_id=1), synth_trace(b, codes, 0, user_id=2)
    spec = specs_by_id()[3]
    pop = baseline_population(ta, spec.sample_size, 40, 0)
    wins = 0
    for seed in range(1, 41):
        intra = run_repetition(spec, spec.cross_traffic, ta, seed, seed, pop).distance
        ref_a = _sample_template(ta, spec.sample_size, seed, seed)
        ref_b = _sample_template(tb, spec.sample_size, seed, seed)
        inter = euclidean_distance(*normalize_templates(ref_a, ref_b, spec.normalization, pop))
        wins += inter > intra
    record_property("detail", f"{wins}/40 seeds")
    assert wins >= 38


@pytest.mark.criterion(12, "full suite twice gives byte-identical reports in < 5 min")
def test_c12_determinism(users, tmp_path, record_property):
    specs = table1_specs()
    times, blobs = [], []
    for k in range(2):
        out = tmp_path / f"run{k}"
        t0 = time.perf_counter()
        run_suite(specs, users[0], users, out, base_seed=42)
        times.append(time.perf_counter() - t0)
        blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    record_property("detail", f"{len(blobs[0])} files, runs {times[0]:.1f} s / {times[1]:.1f} s")
    assert set(blobs[0]) == {"report.csv", "report_raw_ms.csv", "report.json"}
    assert blobs[0] == blobs[1]
    assert max(times) < 300.0
