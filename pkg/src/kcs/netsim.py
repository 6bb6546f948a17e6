"""Single-bottleneck channel simulator.

Packets from every flow share one FIFO drop-tail queue in front of a link of
fixed capacity.  The keystroke flow is reliable and in-order: a dropped
keystroke packet is offered again after a retransmission timeout, and the
receiver holds later packets until all predecessors have arrived.

All times are integer microseconds.  Equal-time events are resolved in a
fixed order: link departures first, then arrivals ordered by
``(time, flow rank, seq)`` where the keystroke flow has rank 0 and cross
traffic sources follow in configuration order.
"""

from __future__ import annotations

import csv
import heapq
import io
from collections import deque
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

KEYSTROKE_FLOW = "keys"
LOG_HEADER = ("time_us", "event", "flow_id", "seq", "queue_len")
LOG_EVENTS = ("inject", "enqueue", "drop", "depart", "deliver", "retransmit")

NEVER = 2**62


class SourceKind(str, Enum):
    CBR = "CBR"
    ONOFF = "ONOFF"


def round_half_up(x) -> int:
    return int(Decimal(str(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True, slots=True)
class Packet:
    flow_id: str
    seq: int
    size_bytes: int
    inject_us: int
    payload_ref: int | None = None

    def __post_init__(self) -> None:
        if self.size_bytes < 1:
            raise ValueError("size_bytes must be >= 1")


@dataclass(frozen=True)
class TrafficSourceSpec:
    """A cross-traffic generator.

    ``rate_pps`` is the constant rate for CBR and the on-phase rate for
    ONOFF.  Phase durations of ONOFF sources are exponential with means
    ``on_ms`` / ``off_ms``.
    """

    kind: SourceKind
    rate_pps: float
    size_bytes: int
    on_ms: float = 0.0
    off_ms: float = 0.0
    start_us: int = 0
    stop_us: int = NEVER
    phase_seed: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SourceKind(self.kind))
        if self.rate_pps <= 0:
            raise ValueError("rate_pps must be > 0")
        if self.size_bytes < 1:
            raise ValueError("size_bytes must be >= 1")
        if self.kind is SourceKind.ONOFF and (self.on_ms <= 0 or self.off_ms < 0):
            raise ValueError("ONOFF needs on_ms > 0 and off_ms >= 0")

    @property
    def interval_us(self) -> int:
        return round_half_up(Decimal(10**6) / Decimal(str(self.rate_pps)))

    @property
    def peak_bps(self) -> float:
        return self.rate_pps * self.size_bytes * 8


@dataclass(frozen=True)
class ChannelConfig:
    bottleneck_bps: int
    queue_capacity_pkts: int = 50
    base_propagation_us: int = 0
    sources: tuple[TrafficSourceSpec, ...] = ()
    rto_initial_us: int = 200_000
    rto_max_us: int = 2_000_000
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.bottleneck_bps <= 0:
            raise ValueError("bottleneck_bps must be > 0")
        if self.queue_capacity_pkts < 1:
            raise ValueError("queue_capacity_pkts must be >= 1")
        if self.rto_initial_us <= 0:
            raise ValueError("rto_initial_us must be > 0")
        if self.rto_max_us < self.rto_initial_us:
            raise ValueError("rto_max_us must be >= rto_initial_us")
        if self.base_propagation_us < 0:
            raise ValueError("base_propagation_us must be >= 0")

    def service_us(self, size_bytes: int) -> int:
        # size*8/bps seconds, in integer microseconds, round half up
        num = size_bytes * 8 * 10**6
        return (2 * num + self.bottleneck_bps) // (2 * self.bottleneck_bps)

    def rto_us(self, previous_drops: int) -> int:
        return min(self.rto_initial_us * 2**previous_drops, self.rto_max_us)

    def flow_names(self) -> list[str]:
        return [KEYSTROKE_FLOW] + [
            s.name or f"{s.kind.value.lower()}{i}" for i, s in enumerate(self.sources)
        ]


@dataclass(frozen=True, slots=True)
class Delivery:
    seq: int
    inject_us: int
    deliver_us: int
    retransmitted: bool = False

    @property
    def link_delay_us(self) -> int:
        return self.deliver_us - self.inject_us


@dataclass(frozen=True)
class ChannelStats:
    avg_delay_us: float
    sd_delay_us: float
    jitter_us: float
    link_loss_pct: float
    utilization: float
    offered_bps: Mapping[str, float] = field(default_factory=dict)
    drops: int = 0
    offered_pkts: int = 0
    retransmissions: int = 0

    def to_dict(self) -> dict:
        return {
            "avg_delay_us": self.avg_delay_us,
            "sd_delay_us": self.sd_delay_us,
            "jitter_us": self.jitter_us,
            "link_loss_pct": self.link_loss_pct,
            "utilization": self.utilization,
            "offered_bps": dict(self.offered_bps),
            "drops": self.drops,
            "offered_pkts": self.offered_pkts,
            "retransmissions": self.retransmissions,
        }


@dataclass(frozen=True, slots=True)
class LogEvent:
    time_us: int
    event: str
    flow_id: str
    seq: int
    queue_len: int


# --------------------------------------------------------------------------
# Traffic generators


def _cbr_times(spec: TrafficSourceSpec, horizon_us: int) -> np.ndarray:
    end = min(spec.stop_us, horizon_us)
    if end <= spec.start_us:
        return np.empty(0, dtype=np.int64)
    return np.arange(spec.start_us, end, spec.interval_us, dtype=np.int64)


def _onoff_times(spec: TrafficSourceSpec, horizon_us: int) -> np.ndarray:
    end = min(spec.stop_us, horizon_us)
    if end <= spec.start_us:
        return np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(spec.phase_seed)
    step = spec.interval_us
    start = spec.start_us
    chunks = []
    t = start
    while t < end:
        on_end = min(t + round_half_up(rng.exponential(spec.on_ms * 1000)), end)
        # Keep the slots of one continuous CBR grid that fall inside [t, on_end).
        first = -(-(t - start) // step)
        last = -(-(on_end - start) // step)
        if last > first:
            chunks.append(start + step * np.arange(first, last, dtype=np.int64))
        t = on_end + round_half_up(rng.exponential(spec.off_ms * 1000))
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(chunks)


def source_times(spec: TrafficSourceSpec, horizon_us: int) -> np.ndarray:
    if spec.kind is SourceKind.CBR:
        return _cbr_times(spec, horizon_us)
    return _onoff_times(spec, horizon_us)


def _to_packets(spec: TrafficSourceSpec, times: np.ndarray, flow_id: str | None) -> list[Packet]:
    flow = flow_id or spec.name or spec.kind.value.lower()
    return [Packet(flow, k, spec.size_bytes, int(t)) for k, t in enumerate(times)]


def generate_cbr(
    spec: TrafficSourceSpec, horizon_us: int, flow_id: str | None = None
) -> list[Packet]:
    """Constant-rate packets from ``start_us`` until ``min(stop_us, horizon_us)``."""
    if spec.kind is not SourceKind.CBR:
        raise ValueError("generate_cbr needs a CBR spec")
    return _to_packets(spec, _cbr_times(spec, horizon_us), flow_id)


def generate_onoff(
    spec: TrafficSourceSpec, horizon_us: int, flow_id: str | None = None
) -> list[Packet]:
    """Bursty packets: CBR at ``rate_pps`` during exponential ON phases.

    With ``off_ms == 0`` the output equals :func:`generate_cbr`.
    """
    if spec.kind is not SourceKind.ONOFF:
        raise ValueError("generate_onoff needs an ONOFF spec")
    return _to_packets(spec, _onoff_times(spec, horizon_us), flow_id)


# --------------------------------------------------------------------------
# Statistics


def channel_stats(
    deliveries: Sequence[Delivery],
    drops: int,
    offered: int,
    config: ChannelConfig | None = None,
    *,
    transmitted_bits: int = 0,
    active_us: int = 0,
    offered_bps: Mapping[str, float] | None = None,
) -> ChannelStats:
    """Summarise a run.

    Delay and jitter cover the keystroke flow only; loss counts link-layer
    drops across all flows against all packets offered to the link.
    """
    delays = np.array([d.link_delay_us for d in deliveries], dtype=float)
    if delays.size:
        avg, sd = float(delays.mean()), float(delays.std())
    else:
        avg = sd = 0.0
    jitter = float(np.abs(np.diff(delays)).mean()) if delays.size > 1 else 0.0
    loss = 100.0 * drops / offered if offered else 0.0
    if config is not None and active_us > 0:
        util = transmitted_bits / (config.bottleneck_bps * active_us / 1e6)
    else:
        util = 0.0
    return ChannelStats(
        avg_delay_us=avg,
        sd_delay_us=sd,
        jitter_us=jitter,
        link_loss_pct=loss,
        utilization=util,
        offered_bps=dict(offered_bps or {}),
        drops=drops,
        offered_pkts=offered,
        retransmissions=sum(1 for d in deliveries if d.retransmitted),
    )


# --------------------------------------------------------------------------
# Simulation


def _stream(times: np.ndarray, rank: int, size: int):
    for k, t in enumerate(times.tolist()):
        yield (t, rank, k, size)


def run_channel(
    config: ChannelConfig,
    keystroke_packets: Sequence[Packet],
    *,
    horizon_us: int | None = None,
    event_log: list[LogEvent] | None = None,
) -> tuple[list[Delivery], ChannelStats]:
    """Simulate the bottleneck and return keystroke deliveries and stats.

    Cross traffic runs until ``horizon_us`` (default: last keystroke injection
    plus ``rto_max_us``).  Pass a list as ``event_log`` to collect the event
    trace.
    """
    ks = sorted(keystroke_packets, key=lambda p: (p.inject_us, p.seq))
    if horizon_us is None:
        horizon_us = (ks[-1].inject_us if ks else 0) + config.rto_max_us
    names = config.flow_names()
    prop = config.base_propagation_us
    cap = config.queue_capacity_pkts
    svc_cache: dict[int, int] = {}

    def svc(size: int) -> int:
        s = svc_cache.get(size)
        if s is None:
            s = svc_cache[size] = config.service_us(size)
        return s

    first_bits = [0] * len(names)
    windows = [0] * len(names)
    streams: list[Iterable[tuple[int, int, int, int]]] = [
        [(p.inject_us, 0, p.seq, p.size_bytes) for p in ks]
    ]
    first_bits[0] = sum(p.size_bytes * 8 for p in ks)
    windows[0] = horizon_us - ks[0].inject_us if ks else 0
    for i, src in enumerate(config.sources, start=1):
        times = source_times(src, horizon_us)
        first_bits[i] = len(times) * src.size_bytes * 8
        windows[i] = max(min(src.stop_us, horizon_us) - src.start_us, 0)
        streams.append(_stream(times, i, src.size_bytes))
    arrivals = heapq.merge(*streams)

    logging = event_log is not None
    log: list[tuple] = []  # (time, phase, counter, event, flow, seq, qlen)
    retx: list[tuple[int, int, int, int]] = []
    drops_by_seq: dict[int, int] = {}
    rx_arrival: dict[int, int] = {}
    in_system: deque[tuple[int, int, int]] = deque()  # (departure, rank, seq)
    last_dep = 0
    offered = drops = 0
    transmitted_bits = 0
    first_arrival: int | None = None
    counter = 0

    nxt = next(arrivals, None)
    while nxt is not None or retx:
        if retx and (nxt is None or retx[0] < nxt):
            t, rank, seq, size = heapq.heappop(retx)
            fresh = False
        else:
            t, rank, seq, size = nxt
            nxt = next(arrivals, None)
            fresh = True
        if first_arrival is None:
            first_arrival = t
        while in_system and in_system[0][0] <= t:
            d, r, s = in_system.popleft()
            if logging:
                counter += 1
                log.append((d, 0, counter, "depart", names[r], s, max(len(in_system) - 1, 0)))
        offered += 1
        if logging:
            counter += 1
            ev = "inject" if fresh else "retransmit"
            log.append((t, 1, counter, ev, names[rank], seq, max(len(in_system) - 1, 0)))
        if len(in_system) > cap:
            drops += 1
            if logging:
                counter += 1
                log.append((t, 1, counter, "drop", names[rank], seq, len(in_system) - 1))
            if rank == 0:
                k = drops_by_seq.get(seq, 0)
                drops_by_seq[seq] = k + 1
                heapq.heappush(retx, (t + config.rto_us(k), 0, seq, size))
            continue
        dep = (t if t > last_dep else last_dep) + svc(size)
        in_system.append((dep, rank, seq))
        last_dep = dep
        transmitted_bits += size * 8
        if logging:
            counter += 1
            log.append((t, 1, counter, "enqueue", names[rank], seq, max(len(in_system) - 1, 0)))
        if rank == 0:
            rx_arrival[seq] = dep + prop

    while in_system:
        d, r, s = in_system.popleft()
        if logging:
            counter += 1
            log.append((d, 0, counter, "depart", names[r], s, max(len(in_system) - 1, 0)))

    deliveries = []
    prev = -1
    for p in sorted(ks, key=lambda p: p.seq):
        at = rx_arrival[p.seq]
        deliver = at if at > prev else prev + 1
        prev = deliver
        deliveries.append(Delivery(p.seq, p.inject_us, deliver, p.seq in drops_by_seq))
        if logging:
            counter += 1
            log.append((deliver, 2, counter, "deliver", KEYSTROKE_FLOW, p.seq, 0))

    if logging:
        log.sort(key=lambda r: (r[0], r[1], r[2]))
        event_log.extend(LogEvent(r[0], r[3], r[4], r[5], r[6]) for r in log)

    active = (last_dep - first_arrival) if first_arrival is not None else 0
    offered_bps = {
        names[i]: (first_bits[i] * 1e6 / windows[i] if windows[i] > 0 else 0.0)
        for i in range(len(names))
    }
    stats = channel_stats(
        deliveries,
        drops,
        offered,
        config,
        transmitted_bits=transmitted_bits,
        active_us=active,
        offered_bps=offered_bps,
    )
    return deliveries, stats


# --------------------------------------------------------------------------
# Event log


def event_log_to_csv(events: Iterable[LogEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for e in events:
        w.writerow([e.time_us, e.event, e.flow_id, e.seq, e.queue_len])
    return buf.getvalue()


def audit_event_log(
    events: Sequence[LogEvent],
    config: ChannelConfig,
    sizes: Mapping[tuple[str, int], int],
) -> list[str]:
    """Check an event log for FIFO order, work conservation and reliability.

    ``sizes`` maps ``(flow_id, seq)`` to packet size.  Returns a list of
    human-readable problems; empty means the log is consistent.
    """
    problems: list[str] = []
    fifo: deque[tuple[str, int, int]] = deque()  # (flow, seq, enqueue time)
    last_dep = None
    injected: set[int] = set()
    delivered: list[tuple[int, int]] = []
    for e in events:
        if e.event not in LOG_EVENTS:
            problems.append(f"unknown event {e.event!r} at {e.time_us}")
            continue
        if e.queue_len < 0 or e.queue_len > config.queue_capacity_pkts:
            problems.append(f"queue_len {e.queue_len} out of range at {e.time_us}")
        if e.event == "inject" and e.flow_id == KEYSTROKE_FLOW:
            injected.add(e.seq)
        elif e.event == "enqueue":
            fifo.append((e.flow_id, e.seq, e.time_us))
        elif e.event == "depart":
            if not fifo:
                problems.append(f"departure from empty queue at {e.time_us}")
                continue
            flow, seq, t_enq = fifo.popleft()
            if (flow, seq) != (e.flow_id, e.seq):
                problems.append(f"FIFO violated at {e.time_us}: {e.flow_id}/{e.seq}")
            start = t_enq if last_dep is None or t_enq > last_dep else last_dep
            expect = start + config.service_us(sizes[(flow, seq)])
            if e.time_us != expect:
                problems.append(
                    f"link idle or overlapped: {flow}/{seq} departed {e.time_us}, expected {expect}"
                )
            last_dep = e.time_us
        elif e.event == "deliver":
            delivered.append((e.seq, e.time_us))
    if fifo:
        problems.append(f"{len(fifo)} packets never departed")
    seqs = [s for s, _ in delivered]
    if sorted(seqs) != sorted(injected) or len(set(seqs)) != len(seqs):
        problems.append("keystroke deliveries do not match injections one-to-one")
    if seqs != sorted(seqs):
        problems.append("keystroke deliveries out of sequence order")
    times = [t for _, t in sorted(delivered)]
    if any(b <= a for a, b in zip(times, times[1:])):
        problems.append("delivery times not strictly increasing")
    return problems
