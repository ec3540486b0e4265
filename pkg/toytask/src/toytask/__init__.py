"""Toy trainable task and scripted candidate pipelines.

Everything here honors the engine's external contracts and nothing else:
candidates read ``SEPDD_DATA_DIR``, shrink work under ``SEPDD_DEBUG=1``, and
report results as ``SEPDD_METRIC <name>=<value>`` lines on stdout.
"""

from .candidates import (
    crashing_candidate,
    good_candidate,
    silent_candidate,
    slow_candidate,
)
from .data import EmptySplit, ToyTaskSpec, generate_toy_data

__all__ = [
    "EmptySplit",
    "ToyTaskSpec",
    "crashing_candidate",
    "generate_toy_data",
    "good_candidate",
    "silent_candidate",
    "slow_candidate",
]
