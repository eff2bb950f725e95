"""Quantum-secured one-time payment cryptograms, end to end on a desk.

Issue conjugate-basis photon tokens, commit them to a merchant through an
information-theoretically secure MAC, verify the resulting cryptograms,
attack them with loss-exploiting double-spend strategies, compute the
secure (error, loss) operating region and finite-size success bounds, and
analyze the time-tag streams that qualify the photon source.
"""

from . import adversary, config, gf2, itmac, protocol, quantum, security, seeding, timetag, wire
from .runner import RunReport, run_attack, run_protocol

__version__ = "0.1.0"

__all__ = [
    "adversary",
    "config",
    "gf2",
    "itmac",
    "protocol",
    "quantum",
    "security",
    "seeding",
    "timetag",
    "wire",
    "RunReport",
    "run_attack",
    "run_protocol",
    "__version__",
]
