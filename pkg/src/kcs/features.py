"""Digraph timing features, adjacency classes, templates and distance."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from kcs.trace import N_CLASSES, Keystroke

FEATURES = ("pr", "pp", "rr", "rp")
TEMPLATE_SIZE = N_CLASSES * len(FEATURES)
TEMPLATE_HEADER = ("user_id", "sample_id", "class", "pr_ms", "pp_ms", "rr_ms", "rp_ms", "count")

# Chebyshev-distance upper bounds for classes 2, 3 and 4; anything beyond is 5.
DEFAULT_CLASS_BOUNDS = (1, 2, 4)


class FeatureError(ValueError):
    pass


class TemplateFormatError(ValueError):
    pass


@dataclass(frozen=True)
class KeyboardMap:
    """Grid positions of physical keys, keyed by key code.

    Codes absent from ``coords`` are off-grid (space, Enter, modifiers,
    arrows, ...) and always fall into the farthest adjacency class.
    """

    coords: Mapping[int, tuple[int, int]]
    class_bounds: tuple[int, int, int] = DEFAULT_CLASS_BOUNDS

    def position(self, key_code: int) -> tuple[int, int] | None:
        return self.coords.get(key_code)


def _qwerty() -> KeyboardMap:
    rows = [
        # (row, first column, unshifted keys, shifted keys)
        (0, 0, "`1234567890-=", "~!@#$%^&*()_+"),
        (1, 1, "QWERTYUIOP[]\\", "qwertyuiop{}|"),
        (2, 1, "ASDFGHJKL;'", "asdfghjkl:\""),
        (3, 1, "ZXCVBNM,./", "zxcvbnm<>?"),
    ]
    coords: dict[int, tuple[int, int]] = {}
    for row, col0, keys, alt in rows:
        for col, (a, b) in enumerate(zip(keys, alt), start=col0):
            coords[ord(a)] = (row, col)
            coords[ord(b)] = (row, col)
    return KeyboardMap(coords)


QWERTY = _qwerty()


def adjacency_class(keyboard: KeyboardMap, key_a: int, key_b: int) -> int:
    """Adjacency class 1..5 of a key pair.

    Class 1 is the same key; otherwise the Chebyshev grid distance ``d`` picks
    the class through ``keyboard.class_bounds`` (default: d=1 -> 2, d=2 -> 3,
    d<=4 -> 4, farther or off-grid -> 5).
    """
    if key_a == key_b:
        return 1
    pa, pb = keyboard.position(key_a), keyboard.position(key_b)
    if pa is None or pb is None:
        return 5
    d = max(abs(pa[0] - pb[0]), abs(pa[1] - pb[1]))
    if d == 0:
        return 1  # shifted/unshifted codes of one physical key
    for cls, bound in enumerate(keyboard.class_bounds, start=2):
        if d <= bound:
            return cls
    return 5


@dataclass(frozen=True, slots=True)
class DigraphFeatures:
    key_a: int
    key_b: int
    pr_us: int
    pp_us: int
    rr_us: int
    rp_abs_us: int
    adjacency_class: int


def extract_digraph_features(
    sample: Sequence[Keystroke], keyboard: KeyboardMap = QWERTY
) -> list[DigraphFeatures]:
    """Compute PR, PP, RR and |RP| for each adjacent keystroke pair.

    ``sample`` must be ordered by press time.  RR stays signed; only RP is
    taken as an absolute value.
    """
    if len(sample) < 2:
        raise FeatureError("need at least two keystrokes")
    out = []
    for a, b in zip(sample, sample[1:]):
        out.append(
            DigraphFeatures(
                key_a=a.key_code,
                key_b=b.key_code,
                pr_us=a.release_us - a.press_us,
                pp_us=b.press_us - a.press_us,
                rr_us=b.release_us - a.release_us,
                rp_abs_us=abs(b.press_us - a.release_us),
                adjacency_class=adjacency_class(keyboard, a.key_code, b.key_code),
            )
        )
    return out


@dataclass(frozen=True)
class Template:
    """Per-class feature means (milliseconds), shape (5, 4).

    Rows are adjacency classes 1..5; columns are PR, PP, RR, |RP|.
    """

    values: np.ndarray
    counts: tuple[int, ...]
    user_id: int = 0
    sample_id: int = 0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).reshape(N_CLASSES, len(FEATURES))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.counts) != N_CLASSES:
            raise FeatureError(f"counts needs {N_CLASSES} entries")

    @property
    def vector(self) -> np.ndarray:
        return self.values.reshape(TEMPLATE_SIZE)


def build_template(
    features: Sequence[DigraphFeatures], user_id: int = 0, sample_id: int = 0
) -> Template:
    """Average each feature per adjacency class.

    Classes with no digraphs take the mean of that feature over all digraphs,
    which keeps the 20 slots populated without injecting zeros.
    """
    if len(features) == 0:
        raise FeatureError("cannot build a template from zero digraphs")
    raw = np.array(
        [(f.pr_us, f.pp_us, f.rr_us, f.rp_abs_us) for f in features], dtype=np.int64
    )
    cls = np.array([f.adjacency_class for f in features]) - 1
    counts = np.bincount(cls, minlength=N_CLASSES)
    # Integer sums are exact; one division per cell.
    sums = np.zeros((N_CLASSES, len(FEATURES)), dtype=np.int64)
    np.add.at(sums, cls, raw)
    overall = raw.sum(axis=0) / len(features)
    values = np.empty((N_CLASSES, len(FEATURES)))
    for i in range(N_CLASSES):
        values[i] = sums[i] / counts[i] if counts[i] else overall
    return Template(values / 1000.0, tuple(counts), user_id, sample_id)


def template_from_keystrokes(
    keystrokes: Sequence[Keystroke],
    user_id: int = 0,
    sample_id: int = 0,
    keyboard: KeyboardMap = QWERTY,
) -> Template:
    return build_template(extract_digraph_features(keystrokes, keyboard), user_id, sample_id)


def euclidean_distance(t1, t2) -> float:
    """Euclidean distance between two templates (or 20-vectors)."""
    a = t1.vector if isinstance(t1, Template) else np.asarray(t1, dtype=float)
    b = t2.vector if isinstance(t2, Template) else np.asarray(t2, dtype=float)
    if a.shape != (TEMPLATE_SIZE,) or b.shape != (TEMPLATE_SIZE,):
        raise FeatureError(f"expected {TEMPLATE_SIZE}-dimensional vectors")
    return math.sqrt(float(np.sum((a - b) ** 2)))


# --------------------------------------------------------------------------
# CSV export


def templates_to_csv(templates: Iterable[Template]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TEMPLATE_HEADER)
    for t in templates:
        for i in range(N_CLASSES):
            writer.writerow(
                [t.user_id, t.sample_id, i + 1, *(f"{v:.6f}" for v in t.values[i]), t.counts[i]]
            )
    return buf.getvalue()


def templates_from_csv(text: str) -> list[Template]:
    """Parse one or more templates (5 rows each, in class order)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != TEMPLATE_HEADER:
        raise TemplateFormatError("missing or wrong template header")
    body = [r for r in rows[1:] if r]
    if len(body) == 0 or len(body) % N_CLASSES:
        raise TemplateFormatError(
            f"template rows must come in groups of {N_CLASSES}, got {len(body)}"
        )
    out = []
    for k in range(0, len(body), N_CLASSES):
        group = body[k : k + N_CLASSES]
        try:
            parsed = [
                (int(r[0]), int(r[1]), int(r[2]), [float(x) for x in r[3:7]], int(r[7]))
                for r in group
            ]
        except (ValueError, IndexError):
            raise TemplateFormatError(f"malformed template row near line {k + 2}") from None
        if [p[2] for p in parsed] != list(range(1, N_CLASSES + 1)):
            raise TemplateFormatError(f"class column must be 1..5 near line {k + 2}")
        if len({(p[0], p[1]) for p in parsed}) != 1:
            raise TemplateFormatError(f"mixed template ids near line {k + 2}")
        out.append(
            Template(
                np.array([p[3] for p in parsed]),
                tuple(p[4] for p in parsed),
                parsed[0][0],
                parsed[0][1],
            )
        )
    return out
