"""Keystroke event traces: parsing, validation, pairing, synthesis and sampling.

A trace file holds one record per line::

    user_id,key_state,key_code,timestamp_ms

``key_state`` is 0 for a press and 1 for a release.  Timestamps are decimal
milliseconds on disk and integer microseconds in memory.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from typing import Iterable, Sequence

import numpy as np

PRESS = 0
RELEASE = 1

N_CLASSES = 5
MIN_INTERVAL_US = 1000


class TraceParseError(ValueError):
    """A trace record could not be parsed."""


class TraceStructureError(ValueError):
    """Records parsed but do not form a single-user trace."""


class PairingError(ValueError):
    """A press could not be paired with a release."""


class SampleError(ValueError):
    """Not enough keystrokes to draw the requested sample."""


@dataclass(frozen=True, slots=True)
class KeyEvent:
    user_id: int
    key_state: int
    key_code: int
    timestamp_us: int

    def __post_init__(self) -> None:
        if self.key_state not in (PRESS, RELEASE):
            raise ValueError(f"key_state must be 0 or 1, got {self.key_state}")
        if self.timestamp_us < 0:
            raise ValueError(f"timestamp_us must be >= 0, got {self.timestamp_us}")


@dataclass(frozen=True, slots=True)
class KeystrokeTrace:
    user_id: int
    events: tuple[KeyEvent, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        for ev in self.events:
            if ev.user_id != self.user_id:
                raise TraceStructureError(
                    f"event user_id {ev.user_id} differs from trace user_id {self.user_id}"
                )

    def __len__(self) -> int:
        return len(self.events)

    def shifted(self, delta_us: int) -> KeystrokeTrace:
        """Return a copy with ``delta_us`` added to every timestamp."""
        return KeystrokeTrace(
            self.user_id,
            tuple(
                KeyEvent(e.user_id, e.key_state, e.key_code, e.timestamp_us + delta_us)
                for e in self.events
            ),
        )


@dataclass(frozen=True, slots=True)
class Keystroke:
    key_code: int
    press_us: int
    release_us: int

    def __post_init__(self) -> None:
        if self.release_us < self.press_us:
            raise ValueError("release_us precedes press_us")

    @property
    def hold_us(self) -> int:
        return self.release_us - self.press_us


@dataclass(frozen=True, slots=True)
class Violation:
    kind: str  # "UnmatchedPress" | "UnmatchedRelease" | "NonMonotone"
    index: int

    def __str__(self) -> str:
        return f"{self.kind}@{self.index}"


@dataclass(frozen=True)
class TypistProfile:
    """Timing statistics of a synthetic typist.

    Gap statistics are indexed by adjacency class (position 0 is class 1).
    All values are in microseconds.
    """

    mean_hold_us: float
    sd_hold_us: float
    mean_gap_us_by_class: tuple[float, ...]
    sd_gap_us_by_class: tuple[float, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean_gap_us_by_class", tuple(self.mean_gap_us_by_class))
        object.__setattr__(self, "sd_gap_us_by_class", tuple(self.sd_gap_us_by_class))
        if len(self.mean_gap_us_by_class) != N_CLASSES or len(self.sd_gap_us_by_class) != N_CLASSES:
            raise ValueError(f"gap statistics need exactly {N_CLASSES} entries")
        if self.mean_hold_us <= 0 or any(m <= 0 for m in self.mean_gap_us_by_class):
            raise ValueError("profile means must be > 0")
        if self.sd_hold_us < 0 or any(s < 0 for s in self.sd_gap_us_by_class):
            raise ValueError("profile standard deviations must be >= 0")


# --------------------------------------------------------------------------
# I/O


def _ms_to_us(text: str) -> int:
    # Decimal keeps "0.0005" exact; round half away from zero (values are >= 0).
    return int((Decimal(text) * 1000).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _us_to_ms(us: int) -> str:
    whole, frac = divmod(us, 1000)
    if frac == 0:
        return str(whole)
    return f"{whole}.{frac:03d}".rstrip("0")


def parse_trace(text: str | Iterable[str]) -> KeystrokeTrace:
    """Parse trace records into a :class:`KeystrokeTrace`.

    Blank lines are skipped.  Events are stably sorted by timestamp.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    events: list[KeyEvent] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise TraceParseError(f"expected 4 fields, got {len(fields)}, line {lineno}")
        try:
            user_id = int(fields[0])
            key_state = int(fields[1])
            key_code = int(fields[2])
        except ValueError:
            raise TraceParseError(f"non-numeric field, line {lineno}") from None
        if key_state not in (PRESS, RELEASE):
            raise TraceParseError(f"key_state must be 0 or 1, line {lineno}")
        try:
            ts = _ms_to_us(fields[3].strip())
        except InvalidOperation:
            raise TraceParseError(f"non-numeric timestamp, line {lineno}") from None
        if ts < 0:
            raise TraceParseError(f"negative timestamp, line {lineno}")
        events.append(KeyEvent(user_id, key_state, key_code, ts))
    if not events:
        raise TraceStructureError("trace contains no records")
    users = {e.user_id for e in events}
    if len(users) > 1:
        raise TraceStructureError(f"mixed user_ids in one trace: {sorted(users)}")
    events.sort(key=lambda e: e.timestamp_us)
    return KeystrokeTrace(events[0].user_id, tuple(events))


def serialize_trace(trace: KeystrokeTrace) -> str:
    return "".join(
        f"{e.user_id},{e.key_state},{e.key_code},{_us_to_ms(e.timestamp_us)}\n"
        for e in trace.events
    )


def read_trace(path) -> KeystrokeTrace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read())


def write_trace(trace: KeystrokeTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_trace(trace))


# --------------------------------------------------------------------------
# Validation and pairing


def _match(events: Sequence[KeyEvent]) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    # FIFO per key code: the earliest open press takes the next release.
    open_presses: dict[int, deque[int]] = defaultdict(deque)
    pairs: list[tuple[int, int]] = []
    stray_releases: list[int] = []
    for i, ev in enumerate(events):
        if ev.key_state == PRESS:
            open_presses[ev.key_code].append(i)
        elif open_presses[ev.key_code]:
            pairs.append((open_presses[ev.key_code].popleft(), i))
        else:
            stray_releases.append(i)
    unmatched = sorted(i for q in open_presses.values() for i in q)
    return pairs, unmatched, stray_releases


def validate_trace(trace: KeystrokeTrace) -> list[Violation]:
    """Return every structural defect of ``trace``; empty when valid."""
    violations = [
        Violation("NonMonotone", i)
        for i in range(1, len(trace.events))
        if trace.events[i].timestamp_us < trace.events[i - 1].timestamp_us
    ]
    _, unmatched, stray = _match(trace.events)
    violations += [Violation("UnmatchedPress", i) for i in unmatched]
    violations += [Violation("UnmatchedRelease", i) for i in stray]
    violations.sort(key=lambda v: v.index)
    return violations


def pair_events(trace: KeystrokeTrace) -> list[Keystroke]:
    """Pair presses with releases of the same key code, ordered by press time.

    Rollover (B pressed before A released) is preserved because matching is
    per key code rather than stack-based.
    """
    pairs, unmatched, _ = _match(trace.events)
    if unmatched:
        raise PairingError(f"unmatched press at event index {unmatched[0]}")
    pairs.sort()
    ev = trace.events
    return [Keystroke(ev[p].key_code, ev[p].timestamp_us, ev[r].timestamp_us) for p, r in pairs]


def keystrokes_to_trace(user_id: int, keystrokes: Iterable[Keystroke]) -> KeystrokeTrace:
    """Flatten keystrokes into a time-ordered event trace.

    Ties keep generation order (press before its own release, earlier
    keystroke first).
    """
    events: list[KeyEvent] = []
    for ks in keystrokes:
        events.append(KeyEvent(user_id, PRESS, ks.key_code, ks.press_us))
        events.append(KeyEvent(user_id, RELEASE, ks.key_code, ks.release_us))
    events.sort(key=lambda e: e.timestamp_us)
    return KeystrokeTrace(user_id, tuple(events))


# --------------------------------------------------------------------------
# Synthesis and sampling


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def synth_trace(
    profile: TypistProfile,
    text: Sequence[int],
    seed: int,
    *,
    user_id: int = 0,
    keyboard=None,
) -> KeystrokeTrace:
    """Generate a trace for ``text`` (a key-code sequence) typed by ``profile``.

    Hold times and press-to-press gaps are normal draws clamped at 1 ms; the
    gap distribution depends on the adjacency class of each key pair.
    """
    from kcs.features import QWERTY, adjacency_class

    if len(text) == 0:
        raise ValueError("text must be non-empty")
    keyboard = QWERTY if keyboard is None else keyboard
    rng = np.random.default_rng([profile.seed, seed])
    n = len(text)
    holds = rng.normal(profile.mean_hold_us, profile.sd_hold_us, size=n)
    classes = np.array(
        [adjacency_class(keyboard, text[i], text[i + 1]) for i in range(n - 1)], dtype=int
    )
    means = np.asarray(profile.mean_gap_us_by_class, dtype=float)[classes - 1]
    sds = np.asarray(profile.sd_gap_us_by_class, dtype=float)[classes - 1]
    gaps = rng.normal(means, sds) if n > 1 else np.empty(0)
    holds = _round_half_up(np.maximum(holds, MIN_INTERVAL_US))
    gaps = _round_half_up(np.maximum(gaps, MIN_INTERVAL_US))
    press = np.concatenate([[0], np.cumsum(gaps)])
    keystrokes = [
        Keystroke(int(code), int(p), int(p + h)) for code, p, h in zip(text, press, holds)
    ]
    return keystrokes_to_trace(user_id, keystrokes)


def select_sample(trace: KeystrokeTrace, n: int, seed: int) -> KeystrokeTrace:
    """Draw a contiguous run of ``n`` keystrokes, re-based to start at 0."""
    keystrokes = pair_events(trace)
    if len(keystrokes) < n:
        raise SampleError(f"need {n} keystrokes, trace has {len(keystrokes)}")
    start = int(np.random.default_rng(seed).integers(0, len(keystrokes) - n + 1))
    chosen = keystrokes[start : start + n]
    t0 = chosen[0].press_us
    return keystrokes_to_trace(
        trace.user_id,
        (Keystroke(k.key_code, k.press_us - t0, k.release_us - t0) for k in chosen),
    )


def text_to_codes(text: str) -> list[int]:
    """Map characters to key codes (uppercase ASCII, newline as Enter=13)."""
    return [13 if ch == "\n" else ord(ch.upper()) for ch in text]
