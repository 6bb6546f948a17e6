"""Synthetic typists standing in for a recorded keystroke dataset."""

from __future__ import annotations

from kcs.trace import KeystrokeTrace, TypistProfile, synth_trace, text_to_codes

# Plain prose for synthetic typing sessions.
CORPUS = (
    "the river bends twice before it reaches the old mill and each bend hides a "
    "small beach where children skip flat stones across the water. in the summer "
    "the mill keeper opens the sluice at dawn, and the wheel turns slowly while the "
    "town wakes up. bakers carry warm bread along the towpath, fishermen check their "
    "lines, and a dog named pepper follows anyone who smells of cheese. by noon the "
    "heat settles over the fields; the swallows fly low and the cows gather under "
    "the single oak near the bridge. farmers talk about rain that never comes, about "
    "prices at the market, and about the new road that will one day bring trucks "
    "through the valley. when evening arrives the light turns gold, the wheel stops, "
    "and the keeper writes a short note in his ledger: water level, weather, visitors "
    "and anything unusual. most entries are dull, yet some pages describe floods, a "
    "fox in the granary, or a traveller who paid for flour with a silver spoon. "
    "quick brown foxes jump over lazy dogs while zebras quietly examine jars of "
    "mixed pickles; next week seven jovial kings may visit the zoo. "
)

DEFAULT_KEYSTROKES = 1500


def corpus_codes(n: int = DEFAULT_KEYSTROKES) -> list[int]:
    """Key codes for the first ``n`` characters of the (repeated) corpus."""
    codes = text_to_codes(CORPUS)
    reps = -(-n // len(codes))
    return (codes * reps)[:n]


def _ms(*values: float) -> tuple[float, ...]:
    return tuple(v * 1000 for v in values)


# Profile 0 is the reference typist used by the experiment suite.  Its flight
# times stay well above the 0.8 ms a 100-byte event takes on a 1 Mbps link, so
# an otherwise idle channel adds no timing noise.
DEFAULT_PROFILES: tuple[TypistProfile, ...] = (
    TypistProfile(95_000, 12_000, _ms(260, 230, 245, 255, 285), _ms(22, 22, 24, 24, 28), seed=101),
    TypistProfile(80_000, 15_000, _ms(200, 150, 170, 185, 230), _ms(35, 30, 32, 35, 40), seed=202),
    TypistProfile(110_000, 20_000, _ms(300, 260, 280, 300, 340), _ms(45, 40, 42, 45, 50), seed=303),
    TypistProfile(70_000, 10_000, _ms(170, 120, 135, 150, 190), _ms(25, 20, 22, 25, 30), seed=404),
    TypistProfile(125_000, 25_000, _ms(340, 320, 330, 345, 380), _ms(50, 45, 48, 50, 60), seed=505),
)


def make_user_traces(
    profiles=DEFAULT_PROFILES, n_keystrokes: int = DEFAULT_KEYSTROKES, seed: int = 0
) -> list[KeystrokeTrace]:
    """One synthetic session per profile; user ids are 1-based positions."""
    codes = corpus_codes(n_keystrokes)
    return [
        synth_trace(p, codes, seed, user_id=u) for u, p in enumerate(profiles, start=1)
    ]
