"""Multi-timescale consolidation chains for successor-feature agents.

Subpackages cover the consolidation dynamics, plain SGD/Adam with a
timescale probe, drift-signal generators, a slippery four-rooms gridworld,
a small manual-gradient network stack, the agents built from those pieces,
and an experiment harness with CSV/JSON logging.
"""

__version__ = "0.1.0"
