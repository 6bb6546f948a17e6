"""Replay keystroke events over the channel and rebuild the received trace.

The remote side sees no origin timestamps; each event is stamped with the
time the transport hands it to the application.
"""

from __future__ import annotations

from typing import Sequence

from kcs.netsim import KEYSTROKE_FLOW, Delivery, Packet
from kcs.trace import KeyEvent, KeystrokeTrace

DEFAULT_EVENT_SIZE_BYTES = 100


class ReplayError(ValueError):
    pass


def events_to_packets(
    trace: KeystrokeTrace,
    event_size_bytes: int = DEFAULT_EVENT_SIZE_BYTES,
    start_us: int = 0,
) -> list[Packet]:
    """One packet per event, injected at the event timestamp (+ ``start_us``)."""
    return [
        Packet(KEYSTROKE_FLOW, i, event_size_bytes, ev.timestamp_us + start_us, payload_ref=i)
        for i, ev in enumerate(trace.events)
    ]


def reconstruct_trace(deliveries: Sequence[Delivery], original: KeystrokeTrace) -> KeystrokeTrace:
    """Rebuild ``original`` with each event re-stamped at its delivery time."""
    if len(deliveries) != len(original.events):
        raise ReplayError(
            f"delivery count {len(deliveries)} != event count {len(original.events)}"
        )
    ordered = sorted(deliveries, key=lambda d: d.seq)
    if [d.seq for d in ordered] != list(range(len(original.events))):
        raise ReplayError("deliveries must cover event indices 0..n-1 exactly once")
    events = tuple(
        KeyEvent(ev.user_id, ev.key_state, ev.key_code, d.deliver_us)
        for ev, d in zip(original.events, ordered)
    )
    return KeystrokeTrace(original.user_id, events)
