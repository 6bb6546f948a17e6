"""Push one keystroke sample through the bottleneck at rising cross-traffic.

Keystroke packets are stamped on arrival at the far side, so queueing delay
variation leaks straight into the timing features.

Run: python3 demos/02_channel.py
"""

from kcs.features import euclidean_distance, template_from_keystrokes
from kcs.netsim import ChannelConfig, SourceKind, TrafficSourceSpec, run_channel
from kcs.replay import events_to_packets, reconstruct_trace
from kcs.trace import pair_events, select_sample
from kcs.typists import make_user_traces

sample = select_sample(make_user_traces()[0], 122, seed=3)
reference = template_from_keystrokes(pair_events(sample))

print(" C pps   size   load kb/s  delay ms  jitter ms  loss %   distance ms")
for c, size in [(0, 1024), (50, 1024), (100, 1024), (110, 1024), (115, 1024), (115, 1130)]:
    sources = tuple(
        TrafficSourceSpec(SourceKind.CBR, c / 2, size, name=f"cbr{k}") for k in range(2)
    ) if c else ()
    channel = ChannelConfig(1_000_000, queue_capacity_pkts=50, sources=sources)
    # start typing after 20 s so the queue has reached its steady state
    packets = events_to_packets(sample, start_us=20_000_000)
    deliveries, stats = run_channel(channel, packets)
    received = template_from_keystrokes(pair_events(reconstruct_trace(deliveries, sample)))
    print(
        f"{c:5d} {size:6d} {c * size * 8 / 1000:10.0f} {stats.avg_delay_us / 1000:9.2f}"
        f" {stats.jitter_us / 1000:10.2f} {stats.link_loss_pct:7.2f}"
        f" {euclidean_distance(reference, received):12.2f}"
    )
