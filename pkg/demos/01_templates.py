"""From raw key events to a 20-value template and a distance between typists.

Run: python3 demos/01_templates.py
"""

from kcs.features import euclidean_distance, template_from_keystrokes
from kcs.trace import pair_events, select_sample, serialize_trace
from kcs.typists import make_user_traces

users = make_user_traces()
alice, bob = users[0], users[1]

# A sample is a contiguous run of 122 keystrokes (244 press/release events).
sample = select_sample(alice, 122, seed=1)
print("first records of the sample, in trace file format:")
print("".join(serialize_trace(sample).splitlines(keepends=True)[:6]))

keys = pair_events(sample)
template = template_from_keystrokes(keys, sample.user_id)
print("per-class means (ms), columns PR PP RR |RP|, last column = digraph count")
for cls, (row, count) in enumerate(zip(template.values, template.counts), start=1):
    print(f"  class {cls}: " + " ".join(f"{v:8.2f}" for v in row) + f"   n={count}")

# Same user, another window of text, versus another user on the same window.
again = template_from_keystrokes(pair_events(select_sample(alice, 122, seed=2)))
other = template_from_keystrokes(pair_events(select_sample(bob, 122, seed=1)))
print(f"\nalice vs alice (other sample): {euclidean_distance(template, again):7.2f} ms")
print(f"alice vs bob   (same window):  {euclidean_distance(template, other):7.2f} ms")
