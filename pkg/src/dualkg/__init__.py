"""Dual-agent knowledge-graph reasoning with abstention.

An Operator explores a knowledge graph through three helper calls, a Server
executes them, and a Supervisor either answers from the collected evidence or
sends feedback. Runs that exhaust the iteration budget abstain.
"""

from __future__ import annotations

from .kg import Fact, KnowledgeGraph, load_graph, load_graph_file
from .metrics import EvalRecord, MetricReport, evaluate
from .orchestrator import Abstained, Answered, ReasoningResult, RunConfig, run_dual, run_single_sc

__all__ = [
    "Abstained",
    "Answered",
    "EvalRecord",
    "Fact",
    "KnowledgeGraph",
    "MetricReport",
    "ReasoningResult",
    "RunConfig",
    "evaluate",
    "load_graph",
    "load_graph_file",
    "run_dual",
    "run_single_sc",
]

__version__ = "0.1.0"
