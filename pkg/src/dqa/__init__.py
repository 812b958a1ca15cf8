"""Diagnostic question answering over ticket repositories.

Retrieval-aggregated evidence over root-cause clusters, persistent diagnostic
state, state-conditioned action selection, and a replay-based evaluation
harness, all runnable fully offline with deterministic defaults.
"""

__version__ = "0.1.0"
