"""Keystroke timing distortion over a simulated remote-desktop channel."""

from kcs.features import (
    QWERTY,
    DigraphFeatures,
    KeyboardMap,
    Template,
    adjacency_class,
    build_template,
    euclidean_distance,
    extract_digraph_features,
)
from kcs.harness import (
    ExperimentResult,
    ExperimentSpec,
    inter_user_baseline,
    normalize_templates,
    run_experiment,
    run_suite,
)
from kcs.netsim import (
    ChannelConfig,
    ChannelStats,
    Delivery,
    Packet,
    SourceKind,
    TrafficSourceSpec,
    generate_cbr,
    generate_onoff,
    run_channel,
)
from kcs.replay import events_to_packets, reconstruct_trace
from kcs.trace import (
    KeyEvent,
    Keystroke,
    KeystrokeTrace,
    TypistProfile,
    pair_events,
    parse_trace,
    select_sample,
    serialize_trace,
    synth_trace,
    validate_trace,
)

__version__ = "0.1.0"
