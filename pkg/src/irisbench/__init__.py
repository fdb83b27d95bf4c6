"""Iris recognition benchmark harness.

Synthetic ocular capture simulation, quality scoring, template
encoding and matching, difficulty-graded evaluation protocols, and
the metrics to score them.
"""

__version__ = "0.1.0"
