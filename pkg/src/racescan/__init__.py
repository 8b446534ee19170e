"""Dynamic data race prediction over recorded execution traces."""

from .trace import (
    Event,
    Op,
    Rule,
    Trace,
    TraceError,
    Violation,
    WellFormedReport,
    check_well_formed,
    check_well_nested,
    close_locks,
    conflicting,
    last_write,
    matching_pairs,
    project,
)
from .trace_io import GenConfig, gen_random_trace, load_fixture, load_trace, parse_trace, serialize_trace

__version__ = "0.1.0"
