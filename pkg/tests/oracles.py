"""Independent brute-force reference models used by the tests.

Nothing here imports the code under test beyond plain data containers, so a
shared bug cannot make both sides agree.
"""

from __future__ import annotations

import itertools
import math
from collections import deque


# --------------------------------------------------------------------------
# Pairing


def brute_force_pairing(events):
    """Match presses to releases by exhaustive search.

    ``events`` is a list of ``(key_state, key_code)`` in time order.  Every
    perfect matching of presses to later releases of the same code is
    enumerated; the answer is the one whose release indices, read in press
    order, are lexicographically smallest.  Returns a list of
    ``(press_index, release_index)`` or None when no perfect matching exists.
    """
    presses = [i for i, (s, _) in enumerate(events) if s == 0]
    releases = [i for i, (s, _) in enumerate(events) if s == 1]
    if len(presses) != len(releases):
        return None
    best = None
    for perm in itertools.permutations(releases):
        ok = all(
            r > p and events[r][1] == events[p][1] for p, r in zip(presses, perm)
        )
        if ok and (best is None or list(perm) < best):
            best = list(perm)
    if best is None:
        return None
    return sorted(zip(presses, best))


# --------------------------------------------------------------------------
# Features and templates


def brute_digraphs(keys):
    """keys: list of (code, press_us, release_us) ordered by press."""
    out = []
    for i in range(len(keys) - 1):
        c1, d1, u1 = keys[i]
        c2, d2, u2 = keys[i + 1]
        out.append(
            {
                "pair": (c1, c2),
                "pr": u1 - d1,
                "pp": d2 - d1,
                "rr": u2 - u1,
                "rp_signed": d2 - u1,
                "rp": abs(d2 - u1),
            }
        )
    return out


def brute_template(digraphs, classes):
    """Group-by-and-average oracle: 5 x 4 list of means in milliseconds."""
    names = ("pr", "pp", "rr", "rp")
    groups = {c: [] for c in range(1, 6)}
    for d, c in zip(digraphs, classes):
        groups[c].append(d)
    overall = [math.fsum(d[n] for d in digraphs) / len(digraphs) / 1000 for n in names]
    table = []
    for c in range(1, 6):
        g = groups[c]
        if g:
            table.append([math.fsum(d[n] for d in g) / len(g) / 1000 for n in names])
        else:
            table.append(list(overall))
    return table


# --------------------------------------------------------------------------
# Channel


def tick_channel(
    bps,
    cap,
    prop,
    keys,
    cross,
    rto_init,
    rto_max,
):
    """Step the bottleneck one microsecond at a time.

    ``keys`` is a list of ``(inject_us, size)`` for the reliable flow (seq is
    the list index); ``cross`` is a list of flows, each a list of
    ``(inject_us, size)``.  Returns ``(deliver_times, drops)`` where
    ``deliver_times[seq]`` is the in-order release time.

    Order inside one tick: a transmission finishing at the tick leaves
    first, the next queued packet starts, then arrivals are handled in
    ``(flow rank, seq)`` order.  A packet is dropped when ``cap`` packets
    are already waiting behind the one on the wire.
    """
    pending = {}  # tick -> list of (rank, seq, size)
    for seq, (t, size) in enumerate(keys):
        pending.setdefault(t, []).append((0, seq, size))
    for rank, flow in enumerate(cross, start=1):
        for seq, (t, size) in enumerate(flow):
            pending.setdefault(t, []).append((rank, seq, size))

    def service(size):
        # round half up of size*8/bps seconds in microseconds
        return int(math.floor(size * 8 * 1_000_000 / bps + 0.5))

    waiting = deque()
    on_wire = None  # (rank, seq, remaining)
    arrived = {}
    drop_count = {}
    drops = 0
    t = 0
    remaining_keys = len(keys)
    last_event = max(pending) if pending else 0
    while remaining_keys or on_wire or waiting or t <= last_event:
        if on_wire is not None:
            rank, seq, left = on_wire
            if left <= 0:
                if rank == 0:
                    arrived[seq] = t + prop
                    remaining_keys -= 1
                on_wire = None
        if on_wire is None and waiting:
            rank, seq, size = waiting.popleft()
            on_wire = (rank, seq, service(size))
        for rank, seq, size in sorted(pending.pop(t, [])):
            if on_wire is not None and len(waiting) >= cap:
                drops += 1
                if rank == 0:
                    k = drop_count.get(seq, 0)
                    drop_count[seq] = k + 1
                    due = t + min(rto_init * 2**k, rto_max)
                    pending.setdefault(due, []).append((rank, seq, size))
                    last_event = max(last_event, due)
                continue
            if on_wire is None:
                on_wire = (rank, seq, service(size))
            else:
                waiting.append((rank, seq, size))
        if on_wire is not None:
            rank, seq, left = on_wire
            on_wire = (rank, seq, left - 1)
        t += 1
    deliver = []
    prev = -1
    for seq in range(len(keys)):
        d = max(arrived[seq], prev + 1)
        deliver.append(d)
        prev = d
    return deliver, drops
